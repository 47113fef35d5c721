//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Every tensor is an immutable node. Operations on tensors that require
//! gradients record their parents and a backward rule; [`Tensor::backward`]
//! walks the recorded graph in reverse creation order and accumulates
//! gradients into the leaves. Node ids are drawn from a monotonic counter,
//! so creation order is always a valid topological order.

mod broadcast;
mod linalg;
mod nn;
mod ops;
mod shape;

pub use broadcast::broadcast_shape;
pub use ops::ElementwiseOp;

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::{Float, FloatConst, NumAssign};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

/// Scalar types a [`Tensor`] can hold.
pub trait Element:
    Float + FloatConst + NumAssign + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + 'static
{
    const DTYPE: DType;

    fn erf(self) -> Self;

    /// `c = a·b + beta·c` for an `m×k` by `k×n` product with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite f64 converts")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn max_offset(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize
}

macro_rules! impl_element {
    ($t:ty, $dtype:expr, $erf:path, $gemm:path) => {
        impl Element for $t {
            const DTYPE: DType = $dtype;

            #[inline]
            fn erf(self) -> Self {
                $erf(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                if k > 0 {
                    assert!(
                        max_offset(m, k, rsa, csa) < a.len(),
                        "gemm: lhs out of bounds"
                    );
                    assert!(
                        max_offset(k, n, rsb, csb) < b.len(),
                        "gemm: rhs out of bounds"
                    );
                }
                assert!(
                    max_offset(m, n, rsc, csc) < c.len(),
                    "gemm: output out of bounds"
                );
                // SAFETY: every index touched by the kernel is bounded by the checks above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_element!(f32, DType::F32, libm::erff, matrixmultiply::sgemm);
impl_element!(f64, DType::F64, libm::erf, matrixmultiply::dgemm);

/// Backward rule: `(grad_output, parents, output_data) -> grad per parent`.
pub type BackwardFn<T> = Box<dyn Fn(&[T], &[Tensor<T>], &[T]) -> Vec<Option<Vec<T>>>>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operations on the graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
    op: &'static str,
}

pub struct Tensor<T: Element = f32>(Rc<Node<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("dtype", &T::DTYPE)
            .field("op", &self.0.op)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn leaf(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
            op: "leaf",
        }))
    }

    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::shape("from_vec", &[data.len()], shape));
        }
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    /// A trainable leaf.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::shape("param", &[data.len()], shape));
        }
        Ok(Self::leaf(data, shape.to_vec(), true))
    }

    pub fn scalar(v: T) -> Self {
        Self::leaf(vec![v], Vec::new(), false)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::leaf(vec![v; numel(shape)], shape.to_vec(), false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape())
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let data = (0..numel(shape)).map(f).collect();
        Self::leaf(data, shape.to_vec(), false)
    }

    /// Records the result of a custom operation. The backward rule is kept
    /// only when gradient recording is on and some parent requires a gradient.
    pub fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        op: &'static str,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(data.len(), numel(&shape), "{op}: output size");
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            let mut t = Self::leaf(data, shape, false);
            if let Some(node) = Rc::get_mut(&mut t.0) {
                node.op = op;
            }
            return t;
        }
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad: true,
            grad: RefCell::new(None),
            parents,
            backward: Some(backward),
            op,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::shape("item", self.shape(), &[]));
        }
        Ok(self.0.data[0])
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<T>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn parents(&self) -> &[Tensor<T>] {
        &self.0.parents
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.data.clone(), self.0.shape.clone(), false)
    }

    /// Same values as a fresh trainable leaf.
    pub fn to_param(&self) -> Self {
        Self::leaf(self.0.data.clone(), self.0.shape.clone(), true)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self
            .0
            .data
            .iter()
            .map(|v| U::of(v.to_f64_lossy()))
            .collect();
        Tensor::<U>::leaf(data, self.0.shape.clone(), false)
    }

    /// Reverse-mode sweep from a scalar root. Gradients accumulate into the
    /// `grad` buffer of every trainable leaf reachable from `self`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let tape = Tape::record(self);
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for node in tape.nodes.iter() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            match &node.0.backward {
                Some(rule) => {
                    let parent_grads = rule(&g, &node.0.parents, &node.0.data);
                    debug_assert_eq!(parent_grads.len(), node.0.parents.len(), "{}", node.0.op);
                    for (p, pg) in node.0.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel(), "{} grad size", node.0.op);
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }
}

/// The recorded operations reachable from a root, in reverse topological
/// (reverse creation) order.
pub struct Tape<T: Element> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Element> Tape<T> {
    pub fn record(root: &Tensor<T>) -> Self {
        let mut seen = HashSet::new();
        let mut stack = vec![root.clone()];
        let mut nodes = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            stack.extend(t.0.parents.iter().cloned());
            nodes.push(t);
        }
        nodes.sort_by_key(|t| std::cmp::Reverse(t.id()));
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(id, op, parent ids)` for every recorded node, latest first.
    pub fn entries(&self) -> Vec<(u64, &'static str, Vec<u64>)> {
        self.nodes
            .iter()
            .map(|t| {
                (
                    t.id(),
                    t.op_name(),
                    t.parents().iter().map(Tensor::id).collect(),
                )
            })
            .collect()
    }
}
