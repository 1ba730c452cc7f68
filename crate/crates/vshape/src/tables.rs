//! The profiling history, the transformation rules, and the runtime that
//! owns them together with the shape registry and allocation counters.
//!
//! Shape recognition works on (shape, position, sub-shape) keys: the
//! history counts how often a sub-shape is seen at a storage position of a
//! new value object, and once a count reaches the threshold a rule mapping
//! the key to the merged shape is created. Rules are append-only.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::shapes::{ClassDescriptor, Shape, ShapeRegistry};

/// Optimization mode of a runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Optimization disabled; every object keeps its default shape.
    None,
    /// Only ahead-of-time seeded rules are consulted; no history is kept.
    Manual,
    /// Full shape recognition: history, rule creation, and rule lookup.
    Auto,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Manual => "manual",
            Mode::Auto => "auto",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Mode::None),
            "manual" => Ok(Mode::Manual),
            "auto" => Ok(Mode::Auto),
            other => Err(format!("unknown mode `{other}` (none|manual|auto)")),
        }
    }
}

/// Optimization parameters. `max_size` bounds the slot count and
/// `max_depth` the shape nesting of any rule target; `threshold` is the
/// occurrence count at which a history entry becomes a rule.
///
/// A `max_size` of 0 or a huge threshold effectively disables the
/// optimization.
#[derive(Debug, Clone, Copy)]
pub struct Config {
    pub max_size: usize,
    pub max_depth: usize,
    pub threshold: u64,
    pub mode: Mode,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            max_size: 7,
            max_depth: 7,
            threshold: 17,
            mode: Mode::Auto,
        }
    }
}

impl Config {
    pub fn with_mode(mode: Mode) -> Self {
        Config {
            mode,
            ..Config::default()
        }
    }
}

/// Key of both tables: a sub-shape observed at a flattened storage
/// position of an object with a given shape.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RuleKey {
    pub shape: Shape,
    pub pos: usize,
    pub sub: Shape,
}

impl RuleKey {
    fn new(shape: &Shape, pos: usize, sub: &Shape) -> Self {
        RuleKey {
            shape: shape.clone(),
            pos,
            sub: sub.clone(),
        }
    }

    fn sort_key(&self) -> (u32, usize, u32) {
        (self.shape.node().index(), self.pos, self.sub.node().index())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HistoryEntry {
    pub count: u64,
    pub frozen: bool,
}

/// Histogram of sub-shape occurrences at construction time. Entries are
/// frozen (stop counting) once a rule has been created for their key.
#[derive(Default)]
pub struct HistoryTable {
    entries: HashMap<RuleKey, HistoryEntry>,
}

impl HistoryTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &RuleKey) -> Option<HistoryEntry> {
        self.entries.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RuleKey, &HistoryEntry)> {
        self.entries.iter()
    }

    fn record(&mut self, key: RuleKey) -> u64 {
        let entry = self.entries.entry(key).or_insert(HistoryEntry {
            count: 0,
            frozen: false,
        });
        if !entry.frozen {
            entry.count += 1;
        }
        entry.count
    }

    fn freeze(&mut self, key: &RuleKey) {
        if let Some(e) = self.entries.get_mut(key) {
            e.frozen = true;
        }
    }
}

/// Append-only table mapping keys to merged shapes, consulted during
/// value object creation.
#[derive(Default)]
pub struct RuleTable {
    map: HashMap<RuleKey, Shape>,
    order: Vec<RuleKey>,
}

impl RuleTable {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, key: &RuleKey) -> Option<Shape> {
        self.map.get(key).cloned()
    }

    pub fn contains(&self, key: &RuleKey) -> bool {
        self.map.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RuleKey, &Shape)> {
        self.order.iter().map(move |k| (k, &self.map[k]))
    }

    fn insert(&mut self, key: RuleKey, target: Shape) {
        debug_assert!(!self.map.contains_key(&key), "rules are never overwritten");
        self.order.push(key.clone());
        self.map.insert(key, target);
    }
}

/// Monotone allocation and table counters of a runtime.
#[derive(Debug, Default, Clone, Copy)]
pub struct Counters {
    pub objects_allocated: u64,
    pub slots_allocated: u64,
    pub reifications: u64,
    pub shapes_created: u64,
    pub rules_created: u64,
    pub field_reads: u64,
    pub inline_restarts: u64,
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("class {0} is not registered")]
    UnknownClass(String),
}

/// One isolated optimization unit: shape registry, history, rules,
/// configuration, and counters. Runtimes share nothing; operations on one
/// runtime must be externally serialized.
pub struct Runtime {
    registry: ShapeRegistry,
    history: HistoryTable,
    rules: RuleTable,
    config: Config,
    counters: Counters,
    /// Net instantiations per shape: incremented when an object of the
    /// shape materializes (construction or reification), decremented when
    /// an object is consumed as an inlining donor. This makes the dominant
    /// shape of a class the one whose objects actually survive.
    instantiations: HashMap<Shape, u64>,
}

impl Runtime {
    pub fn new(config: Config) -> Self {
        Runtime {
            registry: ShapeRegistry::new(),
            history: HistoryTable::default(),
            rules: RuleTable::default(),
            config,
            counters: Counters::default(),
            instantiations: HashMap::new(),
        }
    }

    pub fn with_mode(mode: Mode) -> Self {
        Runtime::new(Config::with_mode(mode))
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub(crate) fn counters_mut(&mut self) -> &mut Counters {
        &mut self.counters
    }

    pub fn history(&self) -> &HistoryTable {
        &self.history
    }

    pub fn rules(&self) -> &RuleTable {
        &self.rules
    }

    pub fn registry(&self) -> &ShapeRegistry {
        &self.registry
    }

    // ---- class and shape operations -----------------------------------

    pub fn intern_class(&mut self, name: &str, arity: usize) -> ClassDescriptor {
        let before = self.registry.shape_count();
        let class = self.registry.intern_class(name, arity);
        self.counters.shapes_created += (self.registry.shape_count() - before) as u64;
        class
    }

    pub fn default_shape(&self, class: &ClassDescriptor) -> Shape {
        self.registry.default_shape(class)
    }

    pub(crate) fn ensure_class(&mut self, class: &ClassDescriptor) -> Shape {
        let before = self.registry.shape_count();
        let shape = self.registry.ensure_class(class);
        self.counters.shapes_created += (self.registry.shape_count() - before) as u64;
        shape
    }

    pub fn merge_shape(&mut self, s: &Shape, pos: usize, sub: &Shape) -> Shape {
        let before = self.registry.shape_count();
        let merged = self.registry.merge_shape(s, pos, sub);
        self.counters.shapes_created += (self.registry.shape_count() - before) as u64;
        merged
    }

    // ---- recognition ---------------------------------------------------

    /// Counts one occurrence of `sub` at slot `pos` of shape `s` and
    /// returns the entry's count. Frozen entries are left unchanged.
    pub fn record_history(&mut self, s: &Shape, pos: usize, sub: &Shape) -> u64 {
        debug_assert!(self.config.mode == Mode::Auto);
        debug_assert!(sub.is_compound(), "history never records leaves");
        debug_assert!(pos < s.width());
        self.history.record(RuleKey::new(s, pos, sub))
    }

    /// Turns the history entry into a rule iff its count has reached the
    /// threshold, no rule exists yet, and the merged shape respects the
    /// size and depth bounds. Freezes the entry on success.
    pub fn maybe_create_rule(&mut self, s: &Shape, pos: usize, sub: &Shape) -> bool {
        let key = RuleKey::new(s, pos, sub);
        let count = match self.history.get(&key) {
            Some(e) => e.count,
            None => return false,
        };
        if count < self.config.threshold || self.rules.contains(&key) {
            return false;
        }
        let (width, depth) = self.registry.probe_merge(s, pos, sub);
        if width > self.config.max_size || depth > self.config.max_depth {
            return false;
        }
        let target = self.merge_shape(s, pos, sub);
        self.rules.insert(key.clone(), target);
        self.history.freeze(&key);
        self.counters.rules_created += 1;
        true
    }

    /// Rule lookup as performed during object creation. Always absent in
    /// mode `none`; consults only seeded rules in mode `manual`.
    pub fn lookup_rule(&self, s: &Shape, pos: usize, sub: &Shape) -> Option<Shape> {
        match self.config.mode {
            Mode::None => None,
            Mode::Manual | Mode::Auto => self.rules.get(&RuleKey::new(s, pos, sub)),
        }
    }

    /// Installs a single rule if the merged shape respects the bounds.
    /// Returns whether the rule was admissible and inserted. Intended for
    /// mode `manual`.
    pub fn add_rule(&mut self, s: &Shape, pos: usize, sub: &Shape) -> bool {
        let key = RuleKey::new(s, pos, sub);
        if self.rules.contains(&key) {
            return false;
        }
        let (width, depth) = self.registry.probe_merge(s, pos, sub);
        if width > self.config.max_size || depth > self.config.max_depth {
            return false;
        }
        let target = self.merge_shape(s, pos, sub);
        self.rules.insert(key, target);
        self.counters.rules_created += 1;
        true
    }

    /// Seeds the chain of rules that repeatedly inline a class's own
    /// (growing) shape at the storage position of `field` in the default
    /// shape: `(default, off, default) -> t1`, `(default, off, t1) -> t2`,
    /// and so on, stopping at the first inadmissible target. Returns the
    /// number of rules installed.
    pub fn seed_linear_rules(
        &mut self,
        class: &ClassDescriptor,
        field: usize,
        levels: usize,
    ) -> Result<usize, TableError> {
        debug_assert!(self.config.mode == Mode::Manual);
        assert!(field < class.arity(), "field {field} out of range");
        let default = self
            .registry
            .lookup_class(class.name(), class.arity())
            .map(|c| self.registry.default_shape(&c))
            .ok_or_else(|| TableError::UnknownClass(class.to_string()))?;
        let pos = default.node().child_region(field).0;
        let mut sub = default.clone();
        let mut created = 0;
        for _ in 0..levels {
            if !self.add_rule(&default, pos, &sub) {
                break;
            }
            sub = self
                .rules
                .get(&RuleKey::new(&default, pos, &sub))
                .expect("rule just inserted");
            created += 1;
        }
        Ok(created)
    }

    // ---- instantiation accounting --------------------------------------

    pub(crate) fn count_instantiation(&mut self, shape: &Shape) {
        *self.instantiations.entry(shape.clone()).or_insert(0) += 1;
    }

    pub(crate) fn uncount_donor(&mut self, shape: &Shape) {
        if let Some(n) = self.instantiations.get_mut(shape) {
            *n = n.saturating_sub(1);
        }
    }

    pub fn instantiation_count(&self, shape: &Shape) -> u64 {
        self.instantiations.get(shape).copied().unwrap_or(0)
    }

    /// Width of the dominant shape of a class: the shape whose objects
    /// survived most often (net of inlining donors), widest on ties.
    /// Absent if the class never had a surviving instance.
    pub fn dominant_chunk_width(&self, class: &ClassDescriptor) -> Option<usize> {
        self.registry
            .shapes()
            .iter()
            .filter(|s| s.class() == Some(class))
            .map(|s| (self.instantiation_count(s), s.width(), s))
            .filter(|(count, _, _)| *count > 0)
            .max_by_key(|(count, width, s)| (*count, *width, s.node().index()))
            .map(|(_, width, _)| width)
    }

    // ---- diagnostics ----------------------------------------------------

    /// Checks the structural laws of the registry and both tables.
    /// Returns a description of the first violation, if any.
    pub fn validate_invariants(&self) -> Result<(), String> {
        for shape in self.registry.shapes() {
            let node = shape.node();
            if node.children().len() != node.class().arity() {
                return Err(format!("{shape}: child count != arity"));
            }
            let width: usize = node.children().iter().map(Shape::width).sum();
            if width != node.width() {
                return Err(format!("{shape}: width law violated"));
            }
            let depth = 1 + node.children().iter().map(Shape::depth).max().unwrap_or(0);
            if depth != node.depth() {
                return Err(format!("{shape}: depth law violated"));
            }
            let mut acc = 0;
            for field in 0..node.class().arity() {
                let (off, child) = node.child_region(field);
                if off != acc {
                    return Err(format!("{shape}: offsets do not partition the storage"));
                }
                acc += child.width();
            }
            if acc != node.width() {
                return Err(format!("{shape}: regions do not cover the storage"));
            }
        }
        for (key, target) in self.rules.iter() {
            if target == &key.shape {
                return Err(format!("rule for {} maps to its own source", key.shape));
            }
            // Recomputing the merge must yield the recorded target instance.
            let (width, depth) = self.registry.probe_merge(&key.shape, key.pos, &key.sub);
            if width != target.width() || depth != target.depth() {
                return Err(format!("rule target mismatch for source {}", key.shape));
            }
            if target.width() > self.config.max_size || target.depth() > self.config.max_depth {
                return Err(format!("rule target {target} exceeds configured bounds"));
            }
            if target.class() != key.shape.class() {
                return Err(format!("rule for {} changes the root class", key.shape));
            }
        }
        if self.config.mode == Mode::Auto {
            for (key, _) in self.rules.iter() {
                match self.history.get(key) {
                    Some(e) if e.frozen && e.count >= self.config.threshold => {}
                    _ => return Err("auto-mode rule without frozen history entry".into()),
                }
            }
        }
        Ok(())
    }
}

/// Deterministic text dump of the shape registry, transformation rules,
/// and history of a runtime.
pub fn dump_stats(rt: &Runtime) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== shapes ==");
    for shape in rt.registry().shapes() {
        let node = shape.node();
        let _ = writeln!(
            out,
            "shape#{}: {} width={} depth={} insts={}{} {}",
            node.index(),
            node.class(),
            node.width(),
            node.depth(),
            rt.instantiation_count(shape),
            if node.is_default() { " default" } else { "" },
            shape,
        );
    }
    let _ = writeln!(out, "== transformation rules ==");
    let mut rules: Vec<_> = rt.rules().iter().collect();
    rules.sort_by_key(|(k, _)| k.sort_key());
    for (key, target) in rules {
        let _ = writeln!(
            out,
            "(shape#{}, {}, shape#{}) -> shape#{}",
            key.shape.node().index(),
            key.pos,
            key.sub.node().index(),
            target.node().index(),
        );
    }
    let _ = writeln!(out, "== history ==");
    let mut entries: Vec<_> = rt.history().iter().collect();
    entries.sort_by_key(|(k, _)| k.sort_key());
    for (key, entry) in entries {
        let _ = writeln!(
            out,
            "(shape#{}, {}, shape#{}) = {}{}",
            key.shape.node().index(),
            key.pos,
            key.sub.node().index(),
            entry.count,
            if entry.frozen { " [frozen]" } else { "" },
        );
    }
    let c = rt.counters();
    let _ = writeln!(out, "== counters ==");
    let _ = writeln!(
        out,
        "objects={} slots={} reifications={} shapes={} rules={} field_reads={} restarts={}",
        c.objects_allocated,
        c.slots_allocated,
        c.reifications,
        c.shapes_created,
        c.rules_created,
        c.field_reads,
        c.inline_restarts,
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn auto_runtime() -> Runtime {
        Runtime::new(Config::default())
    }

    #[test]
    fn history_counts_initialize_and_increment() {
        let mut rt = auto_runtime();
        let node = rt.intern_class("Node", 2);
        let s1 = rt.default_shape(&node);
        assert_eq!(rt.record_history(&s1, 1, &s1), 1);
        for expected in 2..=16 {
            assert_eq!(rt.record_history(&s1, 1, &s1), expected);
        }
        assert_eq!(rt.history().len(), 1);
    }

    #[test]
    fn rule_created_exactly_at_threshold() {
        let mut rt = auto_runtime();
        let node = rt.intern_class("Node", 2);
        let s1 = rt.default_shape(&node);
        for _ in 0..16 {
            rt.record_history(&s1, 1, &s1);
            assert!(!rt.maybe_create_rule(&s1, 1, &s1));
        }
        assert!(rt.lookup_rule(&s1, 1, &s1).is_none());
        rt.record_history(&s1, 1, &s1);
        assert!(rt.maybe_create_rule(&s1, 1, &s1));
        let s2 = rt.lookup_rule(&s1, 1, &s1).expect("rule");
        assert_eq!(s2.width(), 3);
        assert_eq!(rt.counters().rules_created, 1);
        // The entry is frozen now: counting stops, rule creation is a no-op.
        assert_eq!(rt.record_history(&s1, 1, &s1), 17);
        assert!(!rt.maybe_create_rule(&s1, 1, &s1));
        let entry = rt
            .history()
            .get(&RuleKey {
                shape: s1.clone(),
                pos: 1,
                sub: s1.clone(),
            })
            .unwrap();
        assert!(entry.frozen);
        assert_eq!(entry.count, 17);
    }

    #[test]
    fn size_guard_blocks_rule_creation() {
        let mut rt = Runtime::new(Config {
            threshold: 1,
            ..Config::default()
        });
        let node = rt.intern_class("Node", 2);
        let s1 = rt.default_shape(&node);
        // Grow a chain to the maximum admissible width of 7.
        let mut chain = s1.clone();
        for _ in 0..5 {
            rt.record_history(&s1, 1, &chain);
            assert!(rt.maybe_create_rule(&s1, 1, &chain));
            chain = rt.lookup_rule(&s1, 1, &chain).unwrap();
        }
        assert_eq!(chain.width(), 7);
        // Merging any compound sub into a width-7 chain would exceed 7.
        rt.record_history(&s1, 1, &chain);
        assert!(!rt.maybe_create_rule(&s1, 1, &chain));
        assert!(rt.lookup_rule(&s1, 1, &chain).is_none());
    }

    #[test]
    fn depth_guard_blocks_rule_creation() {
        let mut rt = Runtime::new(Config {
            threshold: 1,
            max_depth: 2,
            ..Config::default()
        });
        let node = rt.intern_class("Node", 2);
        let s1 = rt.default_shape(&node);
        rt.record_history(&s1, 1, &s1);
        assert!(rt.maybe_create_rule(&s1, 1, &s1));
        let s2 = rt.lookup_rule(&s1, 1, &s1).unwrap();
        assert_eq!(s2.depth(), 2);
        // One more level would reach depth 3 > 2.
        rt.record_history(&s1, 1, &s2);
        assert!(!rt.maybe_create_rule(&s1, 1, &s2));
    }

    #[test]
    fn lookup_on_fresh_runtime_is_absent() {
        let mut rt = auto_runtime();
        let node = rt.intern_class("Node", 2);
        let s1 = rt.default_shape(&node);
        assert!(rt.lookup_rule(&s1, 1, &s1).is_none());
    }

    #[test]
    fn mode_none_never_finds_rules() {
        let mut rt = Runtime::with_mode(Mode::None);
        let node = rt.intern_class("Node", 2);
        let s1 = rt.default_shape(&node);
        assert!(rt.lookup_rule(&s1, 1, &s1).is_none());
    }

    #[test]
    fn seed_linear_rules_builds_the_chain() {
        let mut rt = Runtime::with_mode(Mode::Manual);
        let node = rt.intern_class("Node", 2);
        let created = rt.seed_linear_rules(&node, 1, 5).unwrap();
        assert_eq!(created, 5);
        assert_eq!(rt.rules().len(), 5);
        let deepest = rt
            .rules()
            .iter()
            .map(|(_, t)| t.width())
            .max()
            .unwrap();
        assert_eq!(deepest, 7);
        // A sixth level would exceed max_size.
        let more = rt.seed_linear_rules(&node, 1, 10).unwrap();
        assert_eq!(more, 0);
    }

    #[test]
    fn seed_zero_levels_is_a_no_op() {
        let mut rt = Runtime::with_mode(Mode::Manual);
        let node = rt.intern_class("Node", 2);
        assert_eq!(rt.seed_linear_rules(&node, 1, 0).unwrap(), 0);
        assert!(rt.rules().is_empty());
    }

    #[test]
    fn seed_wide_class_yields_no_rules() {
        let mut rt = Runtime::with_mode(Mode::Manual);
        let wide = rt.intern_class("Wide", 9);
        assert_eq!(rt.seed_linear_rules(&wide, 0, 3).unwrap(), 0);
    }

    #[test]
    fn seed_unknown_class_errors() {
        let mut rt = Runtime::with_mode(Mode::Manual);
        let ghost = ClassDescriptor::new("Ghost", 2);
        assert!(rt.seed_linear_rules(&ghost, 1, 3).is_err());
    }

    #[test]
    fn invariants_hold_after_seeding_and_recognition() {
        let mut rt = Runtime::new(Config {
            threshold: 2,
            ..Config::default()
        });
        let node = rt.intern_class("Node", 2);
        let s1 = rt.default_shape(&node);
        for _ in 0..4 {
            rt.record_history(&s1, 1, &s1);
            rt.maybe_create_rule(&s1, 1, &s1);
        }
        rt.validate_invariants().unwrap();
    }

    #[test]
    fn dump_contains_tables_in_stable_order() {
        let mut rt = auto_runtime();
        let node = rt.intern_class("Node", 2);
        let s1 = rt.default_shape(&node);
        for _ in 0..17 {
            rt.record_history(&s1, 1, &s1);
            rt.maybe_create_rule(&s1, 1, &s1);
        }
        let dump = dump_stats(&rt);
        assert!(dump.contains("shape#0: Node/2 width=2 depth=1"));
        assert!(dump.contains("(shape#0, 1, shape#0) -> shape#1"));
        assert!(dump.contains("(shape#0, 1, shape#0) = 17 [frozen]"));
    }
}
