use serde::{Deserialize, Serialize};

use crate::error::WorkspaceError;
use crate::ids::DocId;

/// Largest accepted external reference, in bytes of extracted text.
pub const REFERENCE_SIZE_CAP: usize = 512 * 1024;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalReference {
    pub doc: DocId,
    pub title: String,
    pub text: String,
    pub byte_size: usize,
}

/// Workspace-wide writing context. Exactly one per workspace.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaLayer {
    pub purpose: String,
    pub audience: String,
    pub intent: String,
    pub domain_requirements: String,
    pub external_references: Vec<ExternalReference>,
}

impl MetaLayer {
    /// Labeled, non-empty text fields in their canonical order.
    pub fn labeled_fields(&self) -> Vec<(&'static str, &str)> {
        [
            ("Purpose", self.purpose.as_str()),
            ("Audience", self.audience.as_str()),
            ("Intent", self.intent.as_str()),
            ("Domain requirements", self.domain_requirements.as_str()),
        ]
        .into_iter()
        .filter(|(_, v)| !v.trim().is_empty())
        .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.labeled_fields().is_empty() && self.external_references.is_empty()
    }

    pub fn reference(&self, doc: DocId) -> Option<&ExternalReference> {
        self.external_references.iter().find(|r| r.doc == doc)
    }

    pub(crate) fn attach(
        &mut self,
        doc: DocId,
        title: String,
        text: String,
    ) -> Result<&ExternalReference, WorkspaceError> {
        let size = text.len();
        if size > REFERENCE_SIZE_CAP {
            return Err(WorkspaceError::ReferenceTooLarge {
                size,
                cap: REFERENCE_SIZE_CAP,
            });
        }
        self.external_references.push(ExternalReference {
            doc,
            title,
            text,
            byte_size: size,
        });
        Ok(self.external_references.last().expect("just pushed"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oversized_reference_rejected() {
        let mut meta = MetaLayer::default();
        let big = "x".repeat(REFERENCE_SIZE_CAP + 1);
        assert_eq!(
            meta.attach(DocId(1), "big".into(), big).unwrap_err().code(),
            "reference-too-large"
        );
        assert!(meta.external_references.is_empty());
        let exact = "x".repeat(REFERENCE_SIZE_CAP);
        assert!(meta.attach(DocId(2), "ok".into(), exact).is_ok());
    }

    #[test]
    fn blank_fields_are_skipped() {
        let meta = MetaLayer {
            audience: "legal professionals".into(),
            intent: "   ".into(),
            ..Default::default()
        };
        assert_eq!(meta.labeled_fields(), vec![("Audience", "legal professionals")]);
    }
}
