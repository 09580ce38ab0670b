//! Stacks and clusters: a forest of nested, ordered groups.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Placement, Workspace};
use crate::error::WorkspaceError;
use crate::ids::{GroupId, LayerId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupKind {
    Stack,
    Cluster,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "kebab-case")]
pub enum GroupMember {
    Layer(LayerId),
    Group(Group),
}

/// Reference to a group member when building a new group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "kebab-case")]
pub enum MemberRef {
    Layer(LayerId),
    Group(GroupId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub id: GroupId,
    pub kind: GroupKind,
    pub members: Vec<GroupMember>,
    pub tags: BTreeSet<String>,
    pub fanned: bool,
    pub anchor: Placement,
}

impl Group {
    /// Depth-first member layers; for stacks this is the compile order.
    pub fn layers(&self) -> Vec<LayerId> {
        let mut out = Vec::new();
        self.collect_layers(&mut out);
        out
    }

    fn collect_layers(&self, out: &mut Vec<LayerId>) {
        for m in &self.members {
            match m {
                GroupMember::Layer(id) => out.push(*id),
                GroupMember::Group(g) => g.collect_layers(out),
            }
        }
    }

    pub fn find(&self, id: GroupId) -> Option<&Group> {
        if self.id == id {
            return Some(self);
        }
        self.members.iter().find_map(|m| match m {
            GroupMember::Group(g) => g.find(id),
            GroupMember::Layer(_) => None,
        })
    }

    fn find_mut(&mut self, id: GroupId) -> Option<&mut Group> {
        if self.id == id {
            return Some(self);
        }
        self.members.iter_mut().find_map(|m| match m {
            GroupMember::Group(g) => g.find_mut(id),
            GroupMember::Layer(_) => None,
        })
    }

    /// Whether `layer` sits inside this group under at least one stack.
    fn stacks_layer(&self, layer: LayerId, under_stack: bool) -> bool {
        let under = under_stack || self.kind == GroupKind::Stack;
        self.members.iter().any(|m| match m {
            GroupMember::Layer(id) => *id == layer && under,
            GroupMember::Group(g) => g.stacks_layer(layer, under),
        })
    }

    /// Remove `layer`; empty sub-groups are pruned. Returns whether found.
    fn remove_layer(&mut self, layer: LayerId) -> bool {
        let mut found = false;
        self.members.retain_mut(|m| match m {
            GroupMember::Layer(id) if *id == layer => {
                found = true;
                false
            }
            GroupMember::Layer(_) => true,
            GroupMember::Group(g) => {
                found |= g.remove_layer(layer);
                !g.members.is_empty()
            }
        });
        found
    }

    fn replace_layer(&mut self, layer: LayerId, with: &[LayerId]) -> bool {
        for i in 0..self.members.len() {
            match &mut self.members[i] {
                GroupMember::Layer(id) if *id == layer => {
                    self.members.splice(i..=i, with.iter().map(|l| GroupMember::Layer(*l)));
                    return true;
                }
                GroupMember::Group(g) => {
                    if g.replace_layer(layer, with) {
                        return true;
                    }
                }
                GroupMember::Layer(_) => {}
            }
        }
        false
    }

    pub(crate) fn check(&self, seen: &mut BTreeSet<LayerId>, out: &mut Vec<String>) {
        if self.members.is_empty() {
            out.push(format!("group {} is empty", self.id));
        }
        for m in &self.members {
            match m {
                GroupMember::Layer(id) => {
                    if !seen.insert(*id) {
                        out.push(format!("layer {id} appears twice in the group forest"));
                    }
                }
                GroupMember::Group(g) => g.check(seen, out),
            }
        }
    }
}

impl Workspace {
    pub fn group(&self, id: GroupId) -> Result<&Group, WorkspaceError> {
        self.groups
            .iter()
            .find_map(|g| g.find(id))
            .ok_or(WorkspaceError::UnknownGroup(id))
    }

    pub(crate) fn group_mut(&mut self, id: GroupId) -> Result<&mut Group, WorkspaceError> {
        self.groups
            .iter_mut()
            .find_map(|g| g.find_mut(id))
            .ok_or(WorkspaceError::UnknownGroup(id))
    }

    pub fn in_stack(&self, layer: LayerId) -> bool {
        self.groups.iter().any(|g| g.stacks_layer(layer, false))
    }

    pub fn grouped(&self, layer: LayerId) -> bool {
        self.groups.iter().any(|g| g.layers().contains(&layer))
    }

    pub fn stack(&mut self, members: &[MemberRef]) -> Result<GroupId, WorkspaceError> {
        self.create_group(members, GroupKind::Stack)
    }

    pub fn cluster(&mut self, members: &[MemberRef]) -> Result<GroupId, WorkspaceError> {
        self.create_group(members, GroupKind::Cluster)
    }

    fn create_group(
        &mut self,
        members: &[MemberRef],
        kind: GroupKind,
    ) -> Result<GroupId, WorkspaceError> {
        if members.len() < 2 {
            return Err(WorkspaceError::TooFewMembers);
        }
        let distinct: BTreeSet<_> = members.iter().map(|m| format!("{m:?}")).collect();
        if distinct.len() != members.len() {
            return Err(WorkspaceError::DuplicateMember);
        }
        for m in members {
            match *m {
                MemberRef::Layer(id) => {
                    self.layer(id)?;
                    if self.is_binned(id) {
                        return Err(WorkspaceError::Binned(id));
                    }
                    if self.grouped(id) {
                        return Err(WorkspaceError::AlreadyGrouped(id.to_string()));
                    }
                }
                MemberRef::Group(id) => {
                    self.group(id)?;
                    if !self.groups.iter().any(|g| g.id == id) {
                        return Err(WorkspaceError::AlreadyGrouped(id.to_string()));
                    }
                }
            }
        }

        let mut built = Vec::with_capacity(members.len());
        for m in members {
            built.push(match *m {
                MemberRef::Layer(id) => GroupMember::Layer(id),
                MemberRef::Group(id) => {
                    let pos = self.groups.iter().position(|g| g.id == id).expect("checked");
                    GroupMember::Group(self.groups.remove(pos))
                }
            });
        }
        let id = GroupId(self.fresh());
        let mut group = Group {
            id,
            kind,
            members: built,
            tags: BTreeSet::new(),
            fanned: false,
            anchor: Placement::new(0.0, 0.0, 1.0, 1.0, 0),
        };
        let layers = group.layers();
        let placed: Vec<Placement> = layers
            .iter()
            .filter_map(|l| self.placements.get(l).copied())
            .collect();
        if let Some(first) = placed.first() {
            let z = placed.iter().map(|p| p.z).max().unwrap_or(first.z);
            group.anchor = match kind {
                GroupKind::Stack => Placement::new(
                    first.x,
                    first.y,
                    placed.iter().map(|p| p.width).fold(0.0, f64::max),
                    placed.iter().map(|p| p.height).fold(0.0, f64::max),
                    z,
                ),
                GroupKind::Cluster => {
                    let x0 = placed.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
                    let y0 = placed.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
                    let x1 = placed.iter().map(|p| p.right()).fold(f64::NEG_INFINITY, f64::max);
                    let y1 = placed.iter().map(|p| p.bottom()).fold(f64::NEG_INFINITY, f64::max);
                    Placement::new(x0, y0, x1 - x0, y1 - y0, z)
                }
            };
        }
        if kind == GroupKind::Stack {
            for l in &layers {
                if let Some(p) = self.placements.get_mut(l) {
                    p.x = group.anchor.x;
                    p.y = group.anchor.y;
                }
            }
        }
        self.groups.push(group);
        self.refresh_comparisons();
        Ok(id)
    }

    /// Dissolve a top-level group; nested groups become top-level.
    pub fn ungroup(&mut self, id: GroupId) -> Result<(), WorkspaceError> {
        let pos = self
            .groups
            .iter()
            .position(|g| g.id == id)
            .ok_or(WorkspaceError::UnknownGroup(id))?;
        let g = self.groups.remove(pos);
        for m in g.members {
            if let GroupMember::Group(sub) = m {
                self.groups.push(sub);
            }
        }
        Ok(())
    }

    /// `permutation[i]` names the current index that moves to position `i`.
    pub fn reorder_stack(&mut self, id: GroupId, permutation: &[usize]) -> Result<(), WorkspaceError> {
        let g = self.group_mut(id)?;
        if g.kind != GroupKind::Stack {
            return Err(WorkspaceError::NotAStack(id));
        }
        let n = g.members.len();
        let distinct: BTreeSet<usize> = permutation.iter().copied().collect();
        if permutation.len() != n || distinct.len() != n || distinct.iter().any(|&i| i >= n) {
            return Err(WorkspaceError::NotAPermutation);
        }
        let old = std::mem::take(&mut g.members);
        let mut slots: Vec<Option<GroupMember>> = old.into_iter().map(Some).collect();
        g.members = permutation
            .iter()
            .map(|&i| slots[i].take().expect("bijection"))
            .collect();
        Ok(())
    }

    pub fn set_fanned(&mut self, id: GroupId, fanned: bool) -> Result<(), WorkspaceError> {
        let g = self.group_mut(id)?;
        if g.kind != GroupKind::Stack {
            return Err(WorkspaceError::NotAStack(id));
        }
        g.fanned = fanned;
        Ok(())
    }

    pub(crate) fn detach_from_groups(&mut self, layer: LayerId) {
        for g in &mut self.groups {
            g.remove_layer(layer);
        }
        self.groups.retain(|g| !g.members.is_empty());
    }

    /// Put `with` where `layer` was, in whichever group held it.
    pub(crate) fn replace_in_groups(&mut self, layer: LayerId, with: &[LayerId]) {
        for g in &mut self.groups {
            if g.replace_layer(layer, with) {
                break;
            }
        }
        self.groups.retain(|g| !g.members.is_empty());
    }
}
