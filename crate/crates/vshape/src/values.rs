//! Immutable value objects: construction with rule-driven inlining,
//! reifying field access, structural equality, and cell accounting.
//!
//! A boxed value carries a compound shape and a flat storage whose length
//! always equals the shape's width. Construction scans the fields,
//! consults the runtime's transformation rules, and splices donor
//! storages in place of references until no rule applies; the donors
//! themselves are never mutated. Field access reverses the process by
//! reifying a fresh object for an inlined region.

use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::shapes::{ClassDescriptor, Shape, ShapeNode};
use crate::tables::{Mode, Runtime};

/// A primitive integer or a boxed value object.
#[derive(Clone)]
pub enum Value {
    Int(i64),
    Obj(Rc<ObjData>),
}

/// Storage of a boxed value object. Deeply immutable after creation.
pub struct ObjData {
    shape: Shape,
    storage: Vec<Value>,
}

impl ObjData {
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn storage(&self) -> &[Value] {
        &self.storage
    }

    pub fn class(&self) -> &ClassDescriptor {
        self.shape.node().class()
    }
}

// Long un-inlined lists nest one object per element; the default recursive
// drop would overflow the stack on them.
impl Drop for ObjData {
    fn drop(&mut self) {
        let mut stack: Vec<Value> = self.storage.drain(..).collect();
        while let Some(v) = stack.pop() {
            if let Value::Obj(rc) = v {
                if let Ok(mut data) = Rc::try_unwrap(rc) {
                    stack.extend(data.storage.drain(..));
                }
            }
        }
    }
}

impl Value {
    pub fn int(n: i64) -> Self {
        Value::Int(n)
    }

    pub fn is_obj(&self) -> bool {
        matches!(self, Value::Obj(_))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            Value::Obj(_) => None,
        }
    }

    pub fn as_obj(&self) -> Option<&Rc<ObjData>> {
        match self {
            Value::Int(_) => None,
            Value::Obj(o) => Some(o),
        }
    }

    /// The shape of a boxed value; `None` for primitives.
    pub fn shape(&self) -> Option<&Shape> {
        self.as_obj().map(|o| o.shape())
    }
}

/// Abstract memory cost of a value graph: one shape reference per boxed
/// object plus one cell per storage slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryStats {
    pub boxed_objects: u64,
    pub storage_slots: u64,
    pub shape_refs: u64,
    pub total_cells: u64,
}

// ---------------------------------------------------------------------
// Read-only language view (no runtime, no counters, no allocation)
// ---------------------------------------------------------------------

/// A language-level view into a value: either a primitive or an object
/// region described by a compound shape over a storage slice. Inlined
/// regions are viewed in place without reification.
#[derive(Clone, Copy)]
enum View<'a> {
    Int(i64),
    Obj(&'a Rc<ShapeNode>, &'a [Value]),
}

fn view_of(v: &Value) -> View<'_> {
    match v {
        Value::Int(n) => View::Int(*n),
        Value::Obj(o) => View::Obj(o.shape.node(), &o.storage),
    }
}

fn view_field<'a>(node: &'a Rc<ShapeNode>, storage: &'a [Value], field: usize) -> View<'a> {
    let (offset, child) = node.child_region(field);
    match child {
        Shape::Leaf => view_of(&storage[offset]),
        Shape::Compound(sub) => View::Obj(sub, &storage[offset..offset + sub.width()]),
    }
}

// ---------------------------------------------------------------------
// Runtime operations
// ---------------------------------------------------------------------

impl Runtime {
    /// Runs the inlining scan over `fields` starting from shape `s`:
    /// boxed fields whose (shape, position, sub-shape) key has a rule are
    /// replaced by a copy of their storage and the scan restarts with the
    /// merged shape. In mode `auto` every boxed field also updates the
    /// history and may create the rule it then applies.
    pub fn inline_fields(&mut self, s: &Shape, fields: Vec<Value>) -> (Shape, Vec<Value>) {
        assert_eq!(
            fields.len(),
            s.width(),
            "field count must equal shape width"
        );
        let mut shape = s.clone();
        let mut fields = fields;
        let mut i = 0;
        while i < fields.len() {
            let donor = match &fields[i] {
                Value::Obj(o) => Some(o.clone()),
                Value::Int(_) => None,
            };
            if let Some(donor) = donor {
                let sub = donor.shape().clone();
                if self.mode() == Mode::Auto {
                    self.record_history(&shape, i, &sub);
                    self.maybe_create_rule(&shape, i, &sub);
                }
                if let Some(merged) = self.lookup_rule(&shape, i, &sub) {
                    fields.splice(i..=i, donor.storage().iter().cloned());
                    self.uncount_donor(&sub);
                    shape = merged;
                    self.counters_mut().inline_restarts += 1;
                    assert_eq!(fields.len(), shape.width(), "storage-length law");
                    i = 0;
                    continue;
                }
            }
            i += 1;
        }
        (shape, fields)
    }

    /// Creates a boxed value object of `class` from its language-level
    /// fields, compacting them according to the current rules.
    pub fn construct(&mut self, class: &ClassDescriptor, fields: Vec<Value>) -> Value {
        assert_eq!(
            fields.len(),
            class.arity(),
            "arity mismatch constructing {class}"
        );
        let default = self.ensure_class(class);
        let (shape, storage) = self.inline_fields(&default, fields);
        self.finish_object(shape, storage)
    }

    /// Boxes an object without consulting rules or history; used for
    /// interned constants that should not show up in allocation counts.
    pub(crate) fn make_constant(&mut self, class: &ClassDescriptor, fields: Vec<Value>) -> Value {
        assert_eq!(fields.len(), class.arity());
        let shape = self.ensure_class(class);
        Value::Obj(Rc::new(ObjData {
            shape,
            storage: fields,
        }))
    }

    fn finish_object(&mut self, shape: Shape, storage: Vec<Value>) -> Value {
        assert_eq!(storage.len(), shape.width(), "storage-length law");
        let c = self.counters_mut();
        c.objects_allocated += 1;
        c.slots_allocated += storage.len() as u64;
        self.count_instantiation(&shape);
        Value::Obj(Rc::new(ObjData { shape, storage }))
    }

    /// Language-level field access. Reading a direct-access slot returns
    /// the stored value; reading an inlined region reifies a fresh object
    /// carrying the recorded sub-shape and a copy of the region.
    pub fn get_field(&mut self, v: &Value, field: usize) -> Value {
        let obj = v.as_obj().expect("get_field on a primitive");
        self.counters_mut().field_reads += 1;
        let node = obj.shape().node();
        let (offset, child) = node.child_region(field);
        match child {
            Shape::Leaf => obj.storage()[offset].clone(),
            Shape::Compound(sub) => {
                let width = sub.width();
                let storage = obj.storage()[offset..offset + width].to_vec();
                let shape = child.clone();
                let c = self.counters_mut();
                c.reifications += 1;
                c.objects_allocated += 1;
                c.slots_allocated += width as u64;
                self.count_instantiation(&shape);
                Value::Obj(Rc::new(ObjData { shape, storage }))
            }
        }
    }
}

// ---------------------------------------------------------------------
// Shape-independent value functions
// ---------------------------------------------------------------------

/// Value-based equality over the language view: primitives by number,
/// objects by class and fields, independent of how either side is
/// compacted. Works across runtimes.
pub fn structural_eq(a: &Value, b: &Value) -> bool {
    let mut work: Vec<(View, View)> = vec![(view_of(a), view_of(b))];
    while let Some(pair) = work.pop() {
        match pair {
            (View::Int(x), View::Int(y)) => {
                if x != y {
                    return false;
                }
            }
            (View::Obj(na, sa), View::Obj(nb, sb)) => {
                if na.class() != nb.class() {
                    return false;
                }
                for field in 0..na.class().arity() {
                    work.push((view_field(na, sa, field), view_field(nb, sb, field)));
                }
            }
            _ => return false,
        }
    }
    true
}

/// Walks the boxed-object graph reachable from `root`, counting every
/// distinct object once. Primitives cost nothing; each boxed object
/// contributes one shape reference and one cell per slot.
pub fn measure(root: &Value) -> MemoryStats {
    let mut stats = MemoryStats::default();
    let mut seen: HashSet<*const ObjData> = HashSet::new();
    let mut work: Vec<&Rc<ObjData>> = Vec::new();
    if let Value::Obj(o) = root {
        work.push(o);
    }
    while let Some(obj) = work.pop() {
        if !seen.insert(Rc::as_ptr(obj)) {
            continue;
        }
        stats.boxed_objects += 1;
        stats.shape_refs += 1;
        stats.storage_slots += obj.storage().len() as u64;
        for v in obj.storage() {
            if let Value::Obj(o) = v {
                work.push(o);
            }
        }
    }
    stats.total_cells = stats.storage_slots + stats.shape_refs;
    stats
}

const CHECKSUM_MODULUS: u128 = (1 << 61) - 1;

/// Order-sensitive fold of all integers in the language view of a value,
/// modulo 2^61 - 1. Identical for structurally equal values regardless of
/// their shapes.
pub fn checksum(root: &Value) -> u64 {
    let mut h: u128 = 0;
    let mut work: Vec<View> = vec![view_of(root)];
    while let Some(view) = work.pop() {
        match view {
            View::Int(n) => {
                let term = (n as u128) & 0xFFFF_FFFF_FFFF_FFFF;
                h = (h.wrapping_mul(31) + term) % CHECKSUM_MODULUS;
            }
            View::Obj(node, storage) => {
                for field in (0..node.class().arity()).rev() {
                    work.push(view_field(node, storage, field));
                }
            }
        }
    }
    h as u64
}

impl fmt::Display for Value {
    /// Prints the language view: primitives as decimals, objects as
    /// `Name[f0, f1, ...]` over their reified fields.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        enum Item<'a> {
            View(View<'a>),
            Text(&'static str),
        }
        let mut work: Vec<Item> = vec![Item::View(view_of(self))];
        while let Some(item) = work.pop() {
            match item {
                Item::Text(s) => f.write_str(s)?,
                Item::View(View::Int(n)) => write!(f, "{n}")?,
                Item::View(View::Obj(node, storage)) => {
                    write!(f, "{}[", node.class().name())?;
                    work.push(Item::Text("]"));
                    for field in (0..node.class().arity()).rev() {
                        work.push(Item::View(view_field(node, storage, field)));
                        if field > 0 {
                            work.push(Item::Text(", "));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::Config;

    fn list_classes(rt: &mut Runtime) -> (ClassDescriptor, ClassDescriptor) {
        let node = rt.intern_class("Node", 2);
        let nil = rt.intern_class("Nil", 0);
        (node, nil)
    }

    /// Default-shaped list Node[first, Node[first+1, ... Node[last, Nil]]].
    fn default_list(rt: &mut Runtime, first: i64, last: i64) -> Value {
        let (node, nil) = list_classes(rt);
        let mut v = rt.construct(&nil, vec![]);
        for n in (first..=last).rev() {
            v = rt.construct(&node, vec![Value::int(n), v]);
        }
        v
    }

    #[test]
    fn construct_with_empty_rule_table_keeps_the_default_shape() {
        let mut rt = Runtime::new(Config::default());
        let list = default_list(&mut rt, 1, 3);
        let obj = list.as_obj().unwrap();
        assert!(obj.shape().node().is_default());
        assert_eq!(obj.storage().len(), 2);
        assert_eq!(list.to_string(), "Node[1, Node[2, Node[3, Nil[]]]]");
    }

    #[test]
    fn construct_arity_zero() {
        let mut rt = Runtime::new(Config::default());
        let (_, nil) = list_classes(&mut rt);
        let v = rt.construct(&nil, vec![]);
        let obj = v.as_obj().unwrap();
        assert_eq!(obj.storage().len(), 0);
        assert_eq!(rt.counters().objects_allocated, 1);
        assert_eq!(rt.counters().slots_allocated, 0);
    }

    /// The worked construction: with rule (s1,1,s1) -> s2 in place,
    /// combining 1 with a default 3-node list merges the first two nodes.
    #[test]
    fn single_rule_merges_the_first_two_nodes() {
        let mut rt = Runtime::with_mode(Mode::Manual);
        let (node, _) = list_classes(&mut rt);
        let tail = default_list(&mut rt, 2, 4);
        let inner3 = tail.as_obj().unwrap().storage()[1].clone();
        assert_eq!(rt.seed_linear_rules(&node, 1, 1).unwrap(), 1);

        let combined = rt.construct(&node, vec![Value::int(1), tail.clone()]);
        let obj = combined.as_obj().unwrap();
        assert_eq!(obj.shape().width(), 3);
        assert_eq!(obj.shape().to_string(), "Node[_, Node[_, _]]");
        assert_eq!(obj.storage()[0].as_int(), Some(1));
        assert_eq!(obj.storage()[1].as_int(), Some(2));
        // The third slot shares the donor's own tail object.
        assert!(Rc::ptr_eq(
            obj.storage()[2].as_obj().unwrap(),
            inner3.as_obj().unwrap()
        ));
        // The donor is untouched.
        let donor = tail.as_obj().unwrap();
        assert!(donor.shape().node().is_default());
        assert_eq!(donor.storage().len(), 2);
    }

    /// Two chained rules compact a 4-node default list into one
    /// width-4 object in a single construction.
    #[test]
    fn chained_rules_apply_through_restarts() {
        let mut rt = Runtime::with_mode(Mode::Manual);
        let (node, _) = list_classes(&mut rt);
        let tail = default_list(&mut rt, 2, 4);
        let s1 = rt.default_shape(&node);
        let s2 = rt.merge_shape(&s1, 1, &s1);
        assert!(rt.add_rule(&s1, 1, &s1));
        assert!(rt.add_rule(&s2, 2, &s1));

        let combined = rt.construct(&node, vec![Value::int(1), tail]);
        let obj = combined.as_obj().unwrap();
        assert_eq!(obj.shape().width(), 4);
        assert_eq!(obj.storage()[0].as_int(), Some(1));
        assert_eq!(obj.storage()[1].as_int(), Some(2));
        assert_eq!(obj.storage()[2].as_int(), Some(3));
        assert!(obj.storage()[3].is_obj());
        assert_eq!(combined.to_string(), "Node[1, Node[2, Node[3, Node[4, Nil[]]]]]");
        assert_eq!(rt.counters().inline_restarts, 2);
    }

    #[test]
    fn get_field_on_default_shape_does_not_allocate() {
        let mut rt = Runtime::new(Config::default());
        let list = default_list(&mut rt, 1, 2);
        let allocated = rt.counters().objects_allocated;
        let head = rt.get_field(&list, 0);
        assert_eq!(head.as_int(), Some(1));
        assert_eq!(rt.counters().objects_allocated, allocated);
        assert_eq!(rt.counters().reifications, 0);
        assert_eq!(rt.counters().field_reads, 1);
    }

    #[test]
    fn get_field_reifies_inlined_regions() {
        let mut rt = Runtime::with_mode(Mode::Manual);
        let (node, _) = list_classes(&mut rt);
        rt.seed_linear_rules(&node, 1, 3).unwrap();
        // Build bottom-up so every construction can use the seeded rules.
        let list = default_list(&mut rt, 1, 4);
        let obj = list.as_obj().unwrap();
        assert_eq!(obj.shape().width(), 5, "fully inlined 4-element list");

        let r1 = rt.get_field(&list, 1);
        assert_eq!(rt.counters().reifications, 1);
        let r1_obj = r1.as_obj().unwrap();
        assert_eq!(r1_obj.storage()[0].as_int(), Some(2));
        assert_eq!(r1_obj.shape().width(), 4);

        let r2 = rt.get_field(&r1, 1);
        assert_eq!(rt.counters().reifications, 2);
        assert_eq!(r2.as_obj().unwrap().storage()[0].as_int(), Some(3));
        assert_eq!(r2.to_string(), "Node[3, Node[4, Nil[]]]");
    }

    #[test]
    fn reification_is_invisible_at_the_language_level() {
        let mut manual = Runtime::with_mode(Mode::Manual);
        let (node, _) = list_classes(&mut manual);
        manual.seed_linear_rules(&node, 1, 5).unwrap();
        let compact = default_list(&mut manual, 1, 9);

        let mut plain = Runtime::with_mode(Mode::None);
        let naive = default_list(&mut plain, 1, 9);

        assert!(structural_eq(&compact, &naive));
        assert_eq!(checksum(&compact), checksum(&naive));
        let compact_tail = manual.get_field(&compact, 1);
        let naive_tail = plain.get_field(&naive, 1);
        assert!(structural_eq(&compact_tail, &naive_tail));
    }

    #[test]
    fn structural_eq_basics() {
        let mut rt = Runtime::new(Config::default());
        assert!(structural_eq(&Value::int(3), &Value::int(3)));
        assert!(!structural_eq(&Value::int(3), &Value::int(4)));
        let (node, nil) = list_classes(&mut rt);
        let nil_v = rt.construct(&nil, vec![]);
        let a = rt.construct(&node, vec![Value::int(1), nil_v.clone()]);
        let node3 = rt.intern_class("Node", 3);
        let b = rt.construct(
            &node3,
            vec![Value::int(1), nil_v.clone(), nil_v.clone()],
        );
        assert!(!structural_eq(&a, &b), "class mismatch");
        assert!(!structural_eq(&a, &Value::int(1)));
    }

    #[test]
    fn measure_counts_cells_by_definition() {
        assert_eq!(measure(&Value::int(7)), MemoryStats::default());

        let mut rt = Runtime::with_mode(Mode::None);
        let naive = default_list(&mut rt, 1, 6);
        let stats = measure(&naive);
        assert_eq!(stats.boxed_objects, 7, "6 nodes + nil");
        assert_eq!(stats.storage_slots, 12);
        assert_eq!(stats.total_cells, 19);

        let mut rt = Runtime::with_mode(Mode::Manual);
        let (node, _) = list_classes(&mut rt);
        rt.seed_linear_rules(&node, 1, 5).unwrap();
        let chunked = default_list(&mut rt, 1, 6);
        let stats = measure(&chunked);
        assert_eq!(stats.boxed_objects, 2, "one chunk + boxed nil");
        assert_eq!(stats.storage_slots, 7);
        assert_eq!(stats.total_cells, 9);
    }

    #[test]
    fn measure_deduplicates_shared_substructure() {
        let mut rt = Runtime::with_mode(Mode::None);
        let (node, nil) = list_classes(&mut rt);
        let shared = {
            let nil_v = rt.construct(&nil, vec![]);
            rt.construct(&node, vec![Value::int(9), nil_v])
        };
        let pair_class = rt.intern_class("Pair", 2);
        let pair = rt.construct(&pair_class, vec![shared.clone(), shared.clone()]);
        let stats = measure(&pair);
        // pair + node + nil, the node and nil counted once.
        assert_eq!(stats.boxed_objects, 3);
        assert_eq!(stats.storage_slots, 4);
    }

    #[test]
    fn construct_does_not_mutate_its_arguments() {
        let mut rt = Runtime::with_mode(Mode::Manual);
        let (node, _) = list_classes(&mut rt);
        rt.seed_linear_rules(&node, 1, 5).unwrap();
        let tail = default_list(&mut rt, 2, 3);
        let before = tail.to_string();
        let snapshot_shape = tail.shape().unwrap().clone();
        let _ = rt.construct(&node, vec![Value::int(1), tail.clone()]);
        assert_eq!(tail.to_string(), before);
        assert_eq!(tail.shape().unwrap(), &snapshot_shape);
    }

    #[test]
    #[should_panic(expected = "arity mismatch")]
    fn construct_arity_mismatch_panics() {
        let mut rt = Runtime::new(Config::default());
        let (node, _) = list_classes(&mut rt);
        rt.construct(&node, vec![Value::int(1)]);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn get_field_out_of_range_panics() {
        let mut rt = Runtime::new(Config::default());
        let list = default_list(&mut rt, 1, 1);
        rt.get_field(&list, 2);
    }

    #[test]
    fn deep_default_lists_drop_without_overflowing() {
        let mut rt = Runtime::with_mode(Mode::None);
        let list = default_list(&mut rt, 1, 200_000);
        assert_eq!(measure(&list).boxed_objects, 200_001);
        drop(list);
    }
}
