//! Identifier newtypes.
//!
//! Every id is a `u64` drawn from the workspace's single counter, so ids are
//! unique across kinds and stable through save/load. The display form carries
//! a one-letter prefix (`L12`, `B40`) which is also what prompts and backends
//! use to address content.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed id {0:?}")]
pub struct ParseIdError(pub String);

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident, $prefix:literal) => {
        $(#[$doc])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl $name {
            pub const PREFIX: char = $prefix;
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}{}", $prefix, self.0)
            }
        }

        impl FromStr for $name {
            type Err = ParseIdError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let s = s.trim();
                s.strip_prefix($prefix)
                    .and_then(|rest| rest.parse::<u64>().ok())
                    .map($name)
                    .ok_or_else(|| ParseIdError(s.to_string()))
            }
        }
    };
}

id_type!(
    /// Writing, scratchpad and document layers share one id space.
    LayerId,
    'L'
);
id_type!(BlockId, 'B');
id_type!(GroupId, 'G');
id_type!(PlaceholderId, 'P');
id_type!(RequestId, 'R');
id_type!(
    /// An uploaded external reference document attached to the meta layer.
    DocId,
    'D'
);
id_type!(ComparisonId, 'C');
id_type!(AnnotationId, 'A');
id_type!(PreviewId, 'V');
id_type!(SubscriptionId, 'U');

/// Catalog key of a writer's friend. Open-ended so that task assets can add
/// personas; the built-in ones are listed in [`crate::friends`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FriendId(String);

impl FriendId {
    pub fn new(id: impl Into<String>) -> Self {
        FriendId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FriendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FriendId {
    fn from(s: &str) -> Self {
        FriendId(s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        TaskId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(s.to_string())
    }
}
