//! Value classes and the interned shape trees that describe compacted
//! object layouts.
//!
//! A shape is the structural metadata of a value object: a tree whose
//! leaves are direct-access slots and whose inner nodes record which
//! referenced objects have been inlined into the flat storage. Shapes are
//! interned per registry, so structurally equal trees are represented by
//! one instance and can be compared and hashed by identity.

use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::rc::Rc;

/// A value class, identified by name and arity (`Cons/2`, `Nil/0`, ...).
///
/// Two descriptors denote the same class iff both name and arity are
/// equal, which also holds across independent runtimes.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ClassDescriptor {
    name: Rc<str>,
    arity: usize,
}

impl ClassDescriptor {
    pub fn new(name: &str, arity: usize) -> Self {
        assert!(!name.is_empty(), "class name must be non-empty");
        ClassDescriptor {
            name: Rc::from(name),
            arity,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }
}

impl fmt::Display for ClassDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

impl fmt::Debug for ClassDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Interned node of a compound shape. Obtained only through a
/// [`ShapeRegistry`], which guarantees one instance per structure.
pub struct ShapeNode {
    class: ClassDescriptor,
    children: Vec<Shape>,
    width: usize,
    depth: usize,
    /// Storage offset of each language-level field; `offsets[i]` is the sum
    /// of the widths of the preceding children.
    offsets: Vec<usize>,
    /// Creation index within the owning registry, used for stable ordering
    /// in stats dumps.
    index: u32,
    is_default: bool,
}

/// A shape tree: either the canonical direct-access leaf or an interned
/// compound node. Equality and hashing are by identity, which coincides
/// with structural equality for shapes of the same registry.
#[derive(Clone)]
pub enum Shape {
    Leaf,
    Compound(Rc<ShapeNode>),
}

impl Shape {
    pub fn is_leaf(&self) -> bool {
        matches!(self, Shape::Leaf)
    }

    pub fn is_compound(&self) -> bool {
        matches!(self, Shape::Compound(_))
    }

    /// Slot count of the flattened storage described by this shape.
    pub fn width(&self) -> usize {
        match self {
            Shape::Leaf => 1,
            Shape::Compound(n) => n.width,
        }
    }

    /// Nesting count: 0 for a leaf, 1 for a default shape, +1 per
    /// inlining level.
    pub fn depth(&self) -> usize {
        match self {
            Shape::Leaf => 0,
            Shape::Compound(n) => n.depth,
        }
    }

    /// The compound node behind this shape. Panics on a leaf.
    pub fn node(&self) -> &Rc<ShapeNode> {
        match self {
            Shape::Leaf => panic!("leaf shape has no node"),
            Shape::Compound(n) => n,
        }
    }

    pub fn class(&self) -> Option<&ClassDescriptor> {
        match self {
            Shape::Leaf => None,
            Shape::Compound(n) => Some(&n.class),
        }
    }
}

impl ShapeNode {
    pub fn class(&self) -> &ClassDescriptor {
        &self.class
    }

    pub fn children(&self) -> &[Shape] {
        &self.children
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn is_default(&self) -> bool {
        self.is_default
    }

    /// Storage region of a language-level field: its offset into the flat
    /// storage and the sub-shape occupying it.
    pub fn child_region(&self, field: usize) -> (usize, &Shape) {
        assert!(
            field < self.class.arity(),
            "field {} out of range for {}",
            field,
            self.class
        );
        (self.offsets[field], &self.children[field])
    }

    /// Number of compound nodes in the tree rooted here.
    pub fn compound_count(&self) -> usize {
        1 + self
            .children
            .iter()
            .map(|c| match c {
                Shape::Leaf => 0,
                Shape::Compound(n) => n.compound_count(),
            })
            .sum::<usize>()
    }
}

impl PartialEq for Shape {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Shape::Leaf, Shape::Leaf) => true,
            (Shape::Compound(a), Shape::Compound(b)) => Rc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl Eq for Shape {}

impl Hash for Shape {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Shape::Leaf => state.write_u8(0),
            Shape::Compound(n) => {
                state.write_u8(1);
                (Rc::as_ptr(n) as usize).hash(state);
            }
        }
    }
}

impl fmt::Display for Shape {
    /// Structure string: leaves as `_`, compounds as `Name[..]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Leaf => write!(f, "_"),
            Shape::Compound(n) => {
                write!(f, "{}[", n.class.name())?;
                for (i, c) in n.children.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, "]")
            }
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

type InternKey = (ClassDescriptor, Vec<Shape>);

/// Per-runtime registry of classes and interned shapes.
#[derive(Default)]
pub struct ShapeRegistry {
    classes: HashMap<(String, usize), ClassDescriptor>,
    class_order: Vec<ClassDescriptor>,
    defaults: HashMap<ClassDescriptor, Shape>,
    interned: HashMap<InternKey, Shape>,
    shapes: Vec<Shape>,
}

impl ShapeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a class (idempotent) and its default shape on first use.
    pub fn intern_class(&mut self, name: &str, arity: usize) -> ClassDescriptor {
        assert!(!name.is_empty(), "class name must be non-empty");
        if let Some(c) = self.classes.get(&(name.to_string(), arity)) {
            return c.clone();
        }
        let class = ClassDescriptor::new(name, arity);
        self.classes
            .insert((name.to_string(), arity), class.clone());
        self.class_order.push(class.clone());
        let default = self.intern(class.clone(), vec![Shape::Leaf; arity]);
        self.defaults.insert(class.clone(), default);
        class
    }

    pub fn lookup_class(&self, name: &str, arity: usize) -> Option<ClassDescriptor> {
        self.classes.get(&(name.to_string(), arity)).cloned()
    }

    /// The all-leaf shape of a registered class.
    pub fn default_shape(&self, class: &ClassDescriptor) -> Shape {
        self.defaults
            .get(class)
            .cloned()
            .unwrap_or_else(|| panic!("class {class} not registered"))
    }

    /// Registers the class if needed and returns its default shape.
    pub fn ensure_class(&mut self, class: &ClassDescriptor) -> Shape {
        if let Some(s) = self.defaults.get(class) {
            return s.clone();
        }
        let c = self.intern_class(class.name(), class.arity());
        self.default_shape(&c)
    }

    fn intern(&mut self, class: ClassDescriptor, children: Vec<Shape>) -> Shape {
        assert_eq!(
            children.len(),
            class.arity(),
            "child count must equal class arity"
        );
        let key = (class.clone(), children.clone());
        if let Some(s) = self.interned.get(&key) {
            return s.clone();
        }
        let width = children.iter().map(Shape::width).sum();
        let depth = 1 + children.iter().map(Shape::depth).max().unwrap_or(0);
        let mut offsets = Vec::with_capacity(children.len());
        let mut acc = 0;
        for c in &children {
            offsets.push(acc);
            acc += c.width();
        }
        let is_default = children.iter().all(Shape::is_leaf);
        let node = Rc::new(ShapeNode {
            class,
            children,
            width,
            depth,
            offsets,
            index: self.shapes.len() as u32,
            is_default,
        });
        let shape = Shape::Compound(node);
        self.interned.insert(key, shape.clone());
        self.shapes.push(shape.clone());
        shape
    }

    /// Width and depth the merge of `sub` into slot `pos` of `s` would
    /// have, without interning anything.
    pub fn probe_merge(&self, s: &Shape, pos: usize, sub: &Shape) -> (usize, usize) {
        let node = s.node();
        assert!(pos < node.width, "slot {pos} out of range");
        // Nesting level of the leaf at `pos`: count compounds on the path.
        fn leaf_level(node: &ShapeNode, pos: usize) -> usize {
            let mut acc = 0;
            for c in &node.children {
                let w = c.width();
                if pos < acc + w {
                    return match c {
                        Shape::Leaf => 1,
                        Shape::Compound(inner) => 1 + leaf_level(inner, pos - acc),
                    };
                }
                acc += w;
            }
            unreachable!("slot not covered by children")
        }
        let width = node.width - 1 + sub.width();
        let depth = node.depth.max(leaf_level(node, pos) + sub.depth());
        (width, depth)
    }

    /// Substitutes `sub` for the leaf at flattened slot `pos` of `s` and
    /// interns the result. The root class is preserved and the compound
    /// count strictly increases.
    pub fn merge_shape(&mut self, s: &Shape, pos: usize, sub: &Shape) -> Shape {
        assert!(sub.is_compound(), "merge substitute must be compound");
        let node = s.node().clone();
        assert!(pos < node.width, "slot {pos} out of range");
        let mut children = node.children.clone();
        let mut acc = 0;
        for (i, c) in node.children.iter().enumerate() {
            let w = c.width();
            if pos < acc + w {
                children[i] = match c {
                    Shape::Leaf => sub.clone(),
                    Shape::Compound(_) => self.merge_shape(c, pos - acc, sub),
                };
                break;
            }
            acc += w;
        }
        self.intern(node.class.clone(), children)
    }

    /// All interned compound shapes in creation order.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn classes(&self) -> &[ClassDescriptor] {
        &self.class_order
    }

    pub fn shape_count(&self) -> usize {
        self.shapes.len()
    }
}
