//! Revision deltas: the difference between two snapshots, and how to replay it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{BinEntry, ComparisonSession, Excerpt, Group, Placement, Workspace, WorkspaceConfig};
use crate::friends::{FeedbackAnnotation, PeekPreview};
use crate::ids::*;
use crate::layer::{Layer, MetaLayer, Placeholder};

/// Changed and removed entries of one keyed collection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "K: Serialize, V: Serialize",
    deserialize = "K: Deserialize<'de>, V: Deserialize<'de>"
))]
pub struct MapDelta<K, V> {
    pub upserts: Vec<(K, V)>,
    pub removed: Vec<K>,
}

impl<K, V> Default for MapDelta<K, V> {
    fn default() -> Self {
        MapDelta {
            upserts: Vec::new(),
            removed: Vec::new(),
        }
    }
}

impl<K: Ord + Clone, V: Clone + PartialEq> MapDelta<K, V> {
    pub fn between(old: &BTreeMap<K, V>, new: &BTreeMap<K, V>) -> Self {
        let upserts = new
            .iter()
            .filter(|(k, v)| old.get(k) != Some(v))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let removed = old.keys().filter(|k| !new.contains_key(k)).cloned().collect();
        MapDelta { upserts, removed }
    }

    pub fn is_empty(&self) -> bool {
        self.upserts.is_empty() && self.removed.is_empty()
    }

    pub fn apply(&self, map: &mut BTreeMap<K, V>) {
        for k in &self.removed {
            map.remove(k);
        }
        for (k, v) in &self.upserts {
            map.insert(k.clone(), v.clone());
        }
    }
}

fn changed<T: Clone + PartialEq>(old: &T, new: &T) -> Option<T> {
    (old != new).then(|| new.clone())
}

/// Everything needed to bring a snapshot at `from` up to `to`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceDelta {
    pub from: u64,
    pub to: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<WorkspaceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<MetaLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Group>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applied_requests: Option<BTreeSet<RequestId>>,
    pub layers: MapDelta<LayerId, Layer>,
    pub placements: MapDelta<LayerId, Placement>,
    pub bin: MapDelta<LayerId, BinEntry>,
    pub placeholders: MapDelta<PlaceholderId, Placeholder>,
    pub comparisons: MapDelta<ComparisonId, ComparisonSession>,
    pub annotations: MapDelta<AnnotationId, FeedbackAnnotation>,
    pub previews: MapDelta<PreviewId, PeekPreview>,
    pub cross_context: MapDelta<LayerId, Vec<Excerpt>>,
    pub subscriptions: MapDelta<SubscriptionId, LayerId>,
}

impl WorkspaceDelta {
    pub fn between(old: &Workspace, new: &Workspace) -> Self {
        WorkspaceDelta {
            from: old.revision,
            to: new.revision,
            next_id: changed(&old.next_id, &new.next_id),
            config: changed(&old.config, &new.config),
            meta: changed(&old.meta, &new.meta),
            groups: changed(&old.groups, &new.groups),
            applied_requests: changed(&old.applied_requests, &new.applied_requests),
            layers: MapDelta::between(&old.layers, &new.layers),
            placements: MapDelta::between(&old.placements, &new.placements),
            bin: MapDelta::between(&old.bin, &new.bin),
            placeholders: MapDelta::between(&old.placeholders, &new.placeholders),
            comparisons: MapDelta::between(&old.comparisons, &new.comparisons),
            annotations: MapDelta::between(&old.annotations, &new.annotations),
            previews: MapDelta::between(&old.previews, &new.previews),
            cross_context: MapDelta::between(&old.cross_context, &new.cross_context),
            subscriptions: MapDelta::between(&old.subscriptions, &new.subscriptions),
        }
    }

    /// Layers created or changed by this delta.
    pub fn touched_layers(&self) -> impl Iterator<Item = LayerId> + '_ {
        self.layers.upserts.iter().map(|(id, _)| *id)
    }

    /// Replay onto `base`, which must be at revision `from`.
    pub fn apply(&self, base: &mut Workspace) -> Result<(), crate::error::WorkspaceError> {
        if base.revision != self.from {
            return Err(crate::error::WorkspaceError::Precondition(format!(
                "delta starts at revision {}, snapshot is at {}",
                self.from, base.revision
            )));
        }
        base.revision = self.to;
        if let Some(v) = self.next_id {
            base.next_id = v;
        }
        if let Some(v) = &self.config {
            base.config = v.clone();
        }
        if let Some(v) = &self.meta {
            base.meta = v.clone();
        }
        if let Some(v) = &self.groups {
            base.groups = v.clone();
        }
        if let Some(v) = &self.applied_requests {
            base.applied_requests = v.clone();
        }
        self.layers.apply(&mut base.layers);
        self.placements.apply(&mut base.placements);
        self.bin.apply(&mut base.bin);
        self.placeholders.apply(&mut base.placeholders);
        self.comparisons.apply(&mut base.comparisons);
        self.annotations.apply(&mut base.annotations);
        self.previews.apply(&mut base.previews);
        self.cross_context.apply(&mut base.cross_context);
        self.subscriptions.apply(&mut base.subscriptions);
        Ok(())
    }
}
