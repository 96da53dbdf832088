//! Arena-backed rooted tree addressed by integer sequences.
//!
//! Every node carries its address (the sequence of child labels from the
//! root), the number of data points descending through it and, at depth-L
//! leaves, the number of data points assigned there. Child labels are handed
//! out in creation order and are never reused, so an address stays valid for
//! as long as the node lives. Arena slots of pruned nodes are recycled.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Handle to a live node in a [`TreeArena`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    path: Vec<u32>,
    n_desc: usize,
    n_here: usize,
    next_label: u32,
    phi: Option<Vec<f64>>,
}

impl TreeNode {
    fn new(parent: Option<NodeId>, path: Vec<u32>) -> Self {
        TreeNode {
            parent,
            children: Vec::new(),
            path,
            n_desc: 0,
            n_here: 0,
            next_label: 1,
            phi: None,
        }
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    /// The node's address: child labels from the root, empty for the root.
    pub fn path(&self) -> &[u32] {
        &self.path
    }

    pub fn depth(&self) -> usize {
        self.path.len()
    }

    /// Number of data points at or below this node.
    pub fn n_desc(&self) -> usize {
        self.n_desc
    }

    /// Number of data points assigned exactly here.
    pub fn n_here(&self) -> usize {
        self.n_here
    }

    pub fn phi(&self) -> Option<&[f64]> {
        self.phi.as_deref()
    }
}

#[derive(Clone, Debug)]
pub struct TreeArena {
    nodes: Vec<Option<TreeNode>>,
    free: Vec<u32>,
    depth: usize,
}

impl TreeArena {
    /// A root-only tree whose leaves live at `depth`.
    pub fn new(depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("tree depth must be at least 1".into()));
        }
        Ok(TreeArena {
            nodes: vec![Some(TreeNode::new(None, Vec::new()))],
            free: Vec::new(),
            depth,
        })
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    /// Maximum depth L; data live only at this depth.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of arena slots, live or free. Per-node side tables can be
    /// indexed by [`NodeId::index`] when sized to this.
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len() - self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node(NodeId::ROOT).n_desc == 0
    }

    pub fn contains(&self, id: NodeId) -> bool {
        matches!(self.nodes.get(id.index()), Some(Some(_)))
    }

    pub fn get(&self, id: NodeId) -> Result<&TreeNode> {
        self.nodes
            .get(id.index())
            .and_then(Option::as_ref)
            .ok_or(Error::UnknownNode(id))
    }

    /// # Panics
    /// If `id` is not a live node.
    pub fn node(&self, id: NodeId) -> &TreeNode {
        match self.nodes.get(id.index()) {
            Some(Some(node)) => node,
            _ => panic!("node {id} is not in the tree"),
        }
    }

    fn node_mut(&mut self, id: NodeId) -> &mut TreeNode {
        match self.nodes.get_mut(id.index()) {
            Some(Some(node)) => node,
            _ => panic!("node {id} is not in the tree"),
        }
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.node(id).children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.node(id).parent
    }

    pub fn node_depth(&self, id: NodeId) -> usize {
        self.node(id).depth()
    }

    pub fn is_leaf_level(&self, id: NodeId) -> bool {
        self.node_depth(id) == self.depth
    }

    /// Live nodes in arena order.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &TreeNode)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|n| (NodeId(i as u32), n)))
    }

    /// Live nodes in depth-first preorder, children in creation order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![NodeId::ROOT];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.children(id).iter().rev());
        }
        out
    }

    /// Depth-L nodes in preorder.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.preorder()
            .into_iter()
            .filter(|&id| self.is_leaf_level(id))
            .collect()
    }

    /// Path from the root down to `id`, both ends included.
    pub fn path_from_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn find(&self, path: &[u32]) -> Option<NodeId> {
        let mut cur = NodeId::ROOT;
        for &label in path {
            cur = *self
                .children(cur)
                .iter()
                .find(|&&c| self.node(c).path.last() == Some(&label))?;
        }
        Some(cur)
    }

    pub fn lca(&self, a: NodeId, b: NodeId) -> NodeId {
        let (mut a, mut b) = (a, b);
        while self.node_depth(a) > self.node_depth(b) {
            a = self.parent(a).expect("non-root node has a parent");
        }
        while self.node_depth(b) > self.node_depth(a) {
            b = self.parent(b).expect("non-root node has a parent");
        }
        while a != b {
            a = self.parent(a).expect("distinct nodes below the root");
            b = self.parent(b).expect("distinct nodes below the root");
        }
        a
    }

    /// Appends a fresh child under `parent` without touching any counts.
    /// Used for building weighted trees and for deserialization.
    pub fn add_child(&mut self, parent: NodeId) -> Result<NodeId> {
        let p = self.get(parent)?;
        if p.depth() >= self.depth {
            return Err(Error::NewBranchAtLeaf(self.depth, parent));
        }
        Ok(self.push_child(parent))
    }

    /// Like [`add_child`](Self::add_child) but with an explicit label, which
    /// must exceed every label already used under `parent`.
    pub fn add_child_labeled(&mut self, parent: NodeId, label: u32) -> Result<NodeId> {
        let p = self.get(parent)?;
        if p.depth() >= self.depth {
            return Err(Error::NewBranchAtLeaf(self.depth, parent));
        }
        if label < p.next_label {
            return Err(Error::Format(format!(
                "child label {label} under {parent} is not fresh"
            )));
        }
        self.node_mut(parent).next_label = label;
        Ok(self.push_child(parent))
    }

    fn push_child(&mut self, parent: NodeId) -> NodeId {
        let p = self.node_mut(parent);
        let label = p.next_label;
        p.next_label += 1;
        let mut path = p.path.clone();
        path.push(label);
        let node = TreeNode::new(Some(parent), path);
        let id = match self.free.pop() {
            Some(slot) => {
                self.nodes[slot as usize] = Some(node);
                NodeId(slot)
            }
            None => {
                self.nodes.push(Some(node));
                NodeId(self.nodes.len() as u32 - 1)
            }
        };
        self.node_mut(parent).children.push(id);
        id
    }

    /// Adds one data point. With `new_branch` a fresh single-child chain is
    /// grown from `branch_point` down to depth L; otherwise `branch_point`
    /// must be an existing depth-L leaf. Returns the receiving leaf.
    pub fn attach_leaf(&mut self, branch_point: NodeId, new_branch: bool) -> Result<NodeId> {
        let depth = self.get(branch_point)?.depth();
        let leaf = if new_branch {
            if depth >= self.depth {
                return Err(Error::NewBranchAtLeaf(self.depth, branch_point));
            }
            let mut cur = branch_point;
            for _ in depth..self.depth {
                cur = self.push_child(cur);
            }
            cur
        } else {
            if depth != self.depth {
                return Err(Error::WrongDepth {
                    node: branch_point,
                    depth,
                    expected: format!("{} (a leaf)", self.depth),
                });
            }
            branch_point
        };
        self.increment(leaf);
        Ok(leaf)
    }

    /// Adds one data point to an existing leaf (possibly one created by
    /// [`add_child`](Self::add_child)).
    pub fn increment(&mut self, leaf: NodeId) {
        self.node_mut(leaf).n_here += 1;
        let mut cur = Some(leaf);
        while let Some(id) = cur {
            let node = self.node_mut(id);
            node.n_desc += 1;
            cur = node.parent;
        }
    }

    /// Removes one data point from `leaf`, pruning every non-root node whose
    /// descendant count drops to zero.
    pub fn detach_leaf(&mut self, leaf: NodeId) -> Result<()> {
        let node = self.get(leaf)?;
        if node.depth() != self.depth {
            return Err(Error::WrongDepth {
                node: leaf,
                depth: node.depth(),
                expected: format!("{} (a leaf)", self.depth),
            });
        }
        if node.n_here == 0 {
            return Err(Error::EmptyLeaf(leaf));
        }
        self.node_mut(leaf).n_here -= 1;
        let mut cur = leaf;
        loop {
            let node = self.node_mut(cur);
            node.n_desc -= 1;
            let parent = node.parent;
            let emptied = node.n_desc == 0;
            match parent {
                Some(p) => {
                    if emptied {
                        self.remove_child(p, cur);
                    }
                    cur = p;
                }
                None => break,
            }
        }
        Ok(())
    }

    fn remove_child(&mut self, parent: NodeId, child: NodeId) {
        let siblings = &mut self.node_mut(parent).children;
        let pos = siblings
            .iter()
            .position(|&c| c == child)
            .expect("child listed under its parent");
        siblings.remove(pos);
        self.nodes[child.index()] = None;
        self.free.push(child.0);
    }

    pub fn set_phi(&mut self, id: NodeId, phi: Vec<f64>) {
        self.node_mut(id).phi = Some(phi);
    }

    pub fn clear_phis(&mut self) {
        for node in self.nodes.iter_mut().flatten() {
            node.phi = None;
        }
    }

    /// A copy with every `n_desc` recomputed bottom-up from the `n_here`
    /// values. Agrees with the incremental counts on a consistent tree.
    pub fn recount(&self) -> TreeArena {
        let mut out = self.clone();
        for id in self.preorder().into_iter().rev() {
            let below: usize = out.children(id).iter().map(|&c| out.node(c).n_desc).sum();
            let node = out.node_mut(id);
            node.n_desc = below + node.n_here;
        }
        out
    }

    /// Checks count consistency, pruning and depth discipline.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Format(msg));
        for (id, node) in self.iter() {
            let below: usize = node.children.iter().map(|&c| self.node(c).n_desc).sum();
            if node.n_desc != below + node.n_here {
                return bad(format!("count mismatch at {id}"));
            }
            if id != NodeId::ROOT && node.n_desc == 0 {
                return bad(format!("empty node {id} was not pruned"));
            }
            if node.n_here > 0 && node.depth() != self.depth {
                return bad(format!("data held at non-leaf {id}"));
            }
            for &c in &node.children {
                if self.get(c)?.parent != Some(id) {
                    return bad(format!("child {c} does not point back to {id}"));
                }
            }
        }
        Ok(())
    }

    /// Equality of unlabeled shape and counts: child labels, child order and
    /// node parameters are ignored.
    pub fn same_shape(&self, other: &TreeArena) -> bool {
        self.depth == other.depth && self.shape_key(NodeId::ROOT) == other.shape_key(NodeId::ROOT)
    }

    fn shape_key(&self, id: NodeId) -> String {
        let node = self.node(id);
        let mut kids: Vec<String> = node.children.iter().map(|&c| self.shape_key(c)).collect();
        kids.sort_unstable();
        format!("{}:{}({})", node.n_desc, node.n_here, kids.join(","))
    }

    fn same_subtree(&self, a: NodeId, other: &TreeArena, b: NodeId) -> bool {
        let (x, y) = (self.node(a), other.node(b));
        x.path == y.path
            && x.n_desc == y.n_desc
            && x.n_here == y.n_here
            && x.phi == y.phi
            && x.children.len() == y.children.len()
            && x.children
                .iter()
                .zip(&y.children)
                .all(|(&ca, &cb)| self.same_subtree(ca, other, cb))
    }
}

/// Trees compare by structure (addresses and child order), counts and node
/// parameters; arena slot numbers and label counters are ignored.
impl PartialEq for TreeArena {
    fn eq(&self, other: &Self) -> bool {
        self.depth == other.depth && self.same_subtree(NodeId::ROOT, other, NodeId::ROOT)
    }
}
