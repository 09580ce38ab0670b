//! Writing templates: named component lists plus the prompt that distributes
//! a draft across them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FriendError, TEMPLATE};
use crate::ids::{FriendId, TaskId};
use crate::prompt::{RenderTarget, SchemaKind, TaskKnowledge};

/// Body a model writes for a component it has nothing for.
pub const EMPTY_COMPONENT: &str = "-";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WritingTemplate {
    pub id: String,
    #[serde(default = "one")]
    pub version: u32,
    pub components: Vec<String>,
    pub distribution_prompt: String,
}

fn one() -> u32 {
    1
}

impl WritingTemplate {
    pub fn from_toml(text: &str) -> Result<Self, FriendError> {
        let t: WritingTemplate = toml::from_str(text).map_err(|e| FriendError::Asset(e.to_string()))?;
        if t.components.len() < 2 {
            return Err(FriendError::Asset(format!("{}: needs at least two components", t.id)));
        }
        if t.components.iter().any(|c| c.trim().is_empty()) {
            return Err(FriendError::Asset(format!("{}: empty component name", t.id)));
        }
        Ok(t)
    }

    pub fn task_id(&self) -> TaskId {
        TaskId::new(format!("{TEMPLATE}-{}", self.id))
    }

    /// The task the template runs as: one new layer per component.
    pub fn task(&self) -> TaskKnowledge {
        TaskKnowledge {
            id: self.task_id(),
            version: self.version,
            friend: Some(FriendId::new(TEMPLATE)),
            schema: SchemaKind::NewLayers(self.components.len()),
            render_target: RenderTarget::NewLayers,
            instance_count: 1,
            base_prompt: self.distribution_prompt.trim().to_string(),
        }
    }

}

/// Note placed in a component the draft had nothing for.
pub fn guidance(component: &str) -> String {
    format!("Nothing in the draft fits {component} yet. Write it here.")
}

const BUILTIN: &[&str] = &[include_str!("../../assets/templates/argument.toml")];

#[derive(Clone, Debug, Default)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, WritingTemplate>,
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        let mut r = TemplateRegistry::default();
        for text in BUILTIN {
            let t = WritingTemplate::from_toml(text).expect("builtin template asset is valid");
            r.templates.insert(t.id.clone(), t);
        }
        r
    }

    /// Built-ins plus every `*.toml` in `dir`.
    pub fn with_dir(dir: &Path) -> Result<Self, FriendError> {
        let mut r = Self::builtin();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| FriendError::Asset(format!("{}: {e}", dir.display())))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        for p in paths {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| FriendError::Asset(format!("{}: {e}", p.display())))?;
            let t = WritingTemplate::from_toml(&text)?;
            r.templates.insert(t.id.clone(), t);
        }
        Ok(r)
    }

    pub fn get(&self, id: &str) -> Result<&WritingTemplate, FriendError> {
        self.templates
            .get(id)
            .ok_or_else(|| FriendError::UnknownTemplate(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &WritingTemplate> {
        self.templates.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argument_template_has_the_six_components() {
        let r = TemplateRegistry::builtin();
        let t = r.get("argument").unwrap();
        assert_eq!(
            t.components,
            ["Claim", "Grounds", "Warrant", "Backing", "Qualifier", "Rebuttal"]
        );
        assert_eq!(t.task().schema, SchemaKind::NewLayers(6));
        assert_eq!(r.get("sonnet").unwrap_err().code(), "unknown-template");
    }

    #[test]
    fn one_component_is_refused() {
        let e = WritingTemplate::from_toml("id = \"x\"\ncomponents = [\"A\"]\ndistribution_prompt = \"p\"\n");
        assert!(matches!(e, Err(FriendError::Asset(_))));
    }
}
