//! Task knowledge: base prompts and processing rules, one asset file per task.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::SchemaKind;
use super::PromptError;
use crate::ids::{FriendId, TaskId};

/// Where a task's output ends up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenderTarget {
    InPlace,
    NewLayers,
    Annotations,
    Document,
    Preview,
    FoldSummary,
    Scratchpad,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskKnowledge {
    pub id: TaskId,
    pub version: u32,
    #[serde(default)]
    pub friend: Option<FriendId>,
    pub schema: SchemaKind,
    pub render_target: RenderTarget,
    #[serde(default = "one")]
    pub instance_count: u32,
    pub base_prompt: String,
}

fn one() -> u32 {
    1
}

impl TaskKnowledge {
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let t: TaskKnowledge = toml::from_str(text).map_err(|e| PromptError::Asset(e.to_string()))?;
        if t.id.as_str().is_empty() {
            return Err(PromptError::Asset("task id must not be empty".into()));
        }
        if t.instance_count == 0 {
            return Err(PromptError::Asset(format!("{}: instance_count must be >= 1", t.id)));
        }
        if t.base_prompt.trim().is_empty() {
            return Err(PromptError::Asset(format!("{}: empty base prompt", t.id)));
        }
        Ok(t)
    }
}

const BUILTIN: &[(&str, &str)] = &[
    ("elaborate", include_str!("../../assets/tasks/elaborate.toml")),
    ("ideate", include_str!("../../assets/tasks/ideate.toml")),
    ("restructure", include_str!("../../assets/tasks/restructure.toml")),
    ("tone-variants", include_str!("../../assets/tasks/tone-variants.toml")),
    ("feedback", include_str!("../../assets/tasks/feedback.toml")),
    ("audience-feedback", include_str!("../../assets/tasks/audience-feedback.toml")),
    ("research", include_str!("../../assets/tasks/research.toml")),
    ("transition", include_str!("../../assets/tasks/transition.toml")),
    ("compare", include_str!("../../assets/tasks/compare.toml")),
    ("compile-directives", include_str!("../../assets/tasks/compile-directives.toml")),
    ("summarize-folded", include_str!("../../assets/tasks/summarize-folded.toml")),
    ("peek-continuation", include_str!("../../assets/tasks/peek-continuation.toml")),
    ("order-stack", include_str!("../../assets/tasks/order-stack.toml")),
];

/// The task knowledge dictionary.
#[derive(Clone, Debug, Default)]
pub struct TaskRegistry {
    tasks: BTreeMap<TaskId, TaskKnowledge>,
}

impl TaskRegistry {
    /// The tasks that ship with the crate.
    pub fn builtin() -> Self {
        let mut r = TaskRegistry::default();
        for (file, text) in BUILTIN {
            let t = TaskKnowledge::from_toml(text)
                .unwrap_or_else(|e| panic!("builtin task asset {file} is invalid: {e}"));
            r.insert(t).expect("builtin task ids are unique");
        }
        r
    }

    /// Built-in tasks plus every `*.toml` in `dir`; a file whose id matches a
    /// built-in replaces it.
    pub fn with_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut r = Self::builtin();
        let mut seen = BTreeMap::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| PromptError::Asset(format!("{}: {e}", dir.display())))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        entries.sort();
        for path in entries {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| PromptError::Asset(format!("{}: {e}", path.display())))?;
            let t = TaskKnowledge::from_toml(&text)
                .map_err(|e| PromptError::Asset(format!("{}: {e}", path.display())))?;
            if let Some(prev) = seen.insert(t.id.clone(), path.clone()) {
                return Err(PromptError::Asset(format!(
                    "task {} defined in both {} and {}",
                    t.id,
                    prev.display(),
                    path.display()
                )));
            }
            r.tasks.insert(t.id.clone(), t);
        }
        Ok(r)
    }

    pub fn insert(&mut self, task: TaskKnowledge) -> Result<(), PromptError> {
        if self.tasks.contains_key(&task.id) {
            return Err(PromptError::Asset(format!("duplicate task id {}", task.id)));
        }
        self.tasks.insert(task.id.clone(), task);
        Ok(())
    }

    pub fn lookup(&self, id: &str) -> Result<&TaskKnowledge, PromptError> {
        self.tasks
            .get(&TaskId::new(id))
            .ok_or_else(|| PromptError::UnknownTask(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaskKnowledge> {
        self.tasks.values()
    }

    /// Tasks owned by `friend`.
    pub fn for_friend<'a>(&'a self, friend: &'a str) -> impl Iterator<Item = &'a TaskKnowledge> + 'a {
        self.tasks
            .values()
            .filter(move |t| t.friend.as_ref().is_some_and(|f| f.as_str() == friend))
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_lookup() {
        let r = TaskRegistry::builtin();
        assert_eq!(r.len(), 13);
        let e = r.lookup("elaborate").unwrap();
        assert_eq!(e.friend.as_ref().unwrap().as_str(), "danny");
        assert_eq!(e.render_target, RenderTarget::InPlace);
        let t = r.lookup("tone-variants").unwrap();
        assert_eq!(t.schema, SchemaKind::NewLayers(2));
        assert_eq!(t.render_target, RenderTarget::NewLayers);
        assert_eq!(r.lookup("nope"), Err(PromptError::UnknownTask("nope".into())));
    }

    #[test]
    fn directory_overrides_and_extends() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("poem.toml"),
            "id = \"poem\"\nversion = 1\nfriend = \"ivy\"\nschema = \"free-text\"\nrender_target = \"preview\"\nbase_prompt = \"Write a poem.\"\n",
        )
        .unwrap();
        let r = TaskRegistry::with_dir(dir.path()).unwrap();
        assert_eq!(r.len(), 14);
        assert_eq!(r.for_friend("ivy").count(), 2);
        std::fs::write(dir.path().join("bad.toml"), "id = \"x\"\n").unwrap();
        assert!(matches!(TaskRegistry::with_dir(dir.path()), Err(PromptError::Asset(_))));
    }
}
