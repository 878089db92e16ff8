"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 ndarray and records the operations that produced
it; ``backward()`` walks the graph in reverse topological order and
accumulates gradients into every tensor created with
``requires_grad=True``. Only the operations this package trains with are
implemented: elementwise arithmetic, matmul, slicing, reductions,
activations, 2D convolution, instance norm, and the trilinear LUT apply
(whose hand-written gradient lives in ``wblut.kernels``).

Adam lives here too since it operates directly on Tensor leaves.
"""

from __future__ import annotations

import numpy as np

from . import kernels

__all__ = ["Tensor", "tensor", "conv2d", "instance_norm", "lut_apply", "Adam"]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sums grad down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _lift(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    @classmethod
    def _from_op(cls, data, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = cls(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)
        self.grad = g if self.grad is None else self.grad + g

    # -- introspection ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        out = Tensor._from_op(self.data + other.data, (self, other), None)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g)
            if other.requires_grad:
                other._accumulate(g)

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor._from_op(-self.data, (self,), None)

        def backward(g):
            self._accumulate(-g)

        out._backward = backward
        return out

    def __sub__(self, other):
        other = self._lift(other)
        out = Tensor._from_op(self.data - other.data, (self, other), None)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g)
            if other.requires_grad:
                other._accumulate(-g)

        out._backward = backward
        return out

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        out = Tensor._from_op(self.data * other.data, (self, other), None)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * other.data)
            if other.requires_grad:
                other._accumulate(g * self.data)

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out = Tensor._from_op(self.data / other.data, (self, other), None)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g / other.data)
            if other.requires_grad:
                other._accumulate(-g * self.data / (other.data * other.data))

        out._backward = backward
        return out

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = Tensor._from_op(self.data**exponent, (self,), None)

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        out._backward = backward
        return out

    def __matmul__(self, other):
        other = self._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul supports 2D operands only")
        out = Tensor._from_op(self.data @ other.data, (self, other), None)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        out._backward = backward
        return out

    # -- shape ops ---------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor._from_op(self.data.reshape(shape), (self,), None)
        src_shape = self.data.shape

        def backward(g):
            self._accumulate(g.reshape(src_shape))

        out._backward = backward
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        out = Tensor._from_op(self.data.transpose(axes), (self,), None)

        def backward(g):
            self._accumulate(g.transpose(inverse))

        out._backward = backward
        return out

    @property
    def T(self):
        if self.data.ndim != 2:
            raise ValueError(".T is defined for 2D tensors")
        return self.transpose(1, 0)

    def __getitem__(self, index):
        out = Tensor._from_op(self.data[index], (self,), None)
        fancy = any(
            isinstance(part, (np.ndarray, list))
            for part in (index if isinstance(index, tuple) else (index,))
        )
        src_shape = self.data.shape

        def backward(g):
            full = np.zeros(src_shape, dtype=np.float64)
            if fancy:
                np.add.at(full, index, g)
            else:
                full[index] += g
            self._accumulate(full)

        out._backward = backward
        return out

    # -- reductions ----------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor._from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), None)
        src_shape = self.data.shape

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, src_shape))
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, src_shape))

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for a in axes:
                count *= self.data.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- elementwise nonlinearities ---------------------------------------------

    def sqrt(self):
        root = np.sqrt(self.data)
        out = Tensor._from_op(root, (self,), None)

        def backward(g):
            # finite subgradient 0 at exactly zero keeps hinge-style
            # distances from blowing up
            self._accumulate(np.where(root > 0.0, g * 0.5 / np.where(root > 0, root, 1.0), 0.0))

        out._backward = backward
        return out

    def relu(self):
        mask = self.data > 0.0
        out = Tensor._from_op(np.where(mask, self.data, 0.0), (self,), None)

        def backward(g):
            self._accumulate(g * mask)

        out._backward = backward
        return out

    def leaky_relu(self, alpha: float = 0.2):
        mask = self.data > 0.0
        out = Tensor._from_op(np.where(mask, self.data, alpha * self.data), (self,), None)

        def backward(g):
            self._accumulate(g * np.where(mask, 1.0, alpha))

        out._backward = backward
        return out

    # -- autodiff driver -------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit grad needs a scalar")
            grad = np.ones_like(self.data)

        # iterative topological sort; training graphs are deep enough that
        # recursion would be fragile
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_graph(self) -> None:
        """Drops recorded parents so the graph can be garbage collected."""
        self._parents = ()
        self._backward = None


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# Convolution (im2col), NCHW layout


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride]
    return cols.reshape(b, c * kh * kw, ho * wo), ho, wo


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int, ho: int, wo: int):
    b, c, h, w = x_shape
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    cols = cols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += cols[
                :, :, i, j
            ]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """NCHW convolution: x (B,C,H,W), weight (O,C,kh,kw), bias (O,)."""
    b, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"weight expects {ci} input channels, image has {c}")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    wflat = weight.data.reshape(o, -1)
    out_data = (wflat @ cols).reshape(b, o, ho, wo) + bias.data.reshape(1, o, 1, 1)
    out = Tensor._from_op(out_data, (x, weight, bias), None)

    def backward(g):
        gflat = g.reshape(b, o, ho * wo)
        if bias.requires_grad:
            bias._accumulate(gflat.sum(axis=(0, 2)))
        if weight.requires_grad:
            gw = np.einsum("bop,bkp->ok", gflat, cols)
            weight._accumulate(gw.reshape(weight.data.shape))
        if x.requires_grad:
            gcols = np.einsum("ok,bop->bkp", wflat, gflat)
            x._accumulate(_col2im(gcols, x.data.shape, kh, kw, stride, pad, ho, wo))

    out._backward = backward
    return out


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Non-affine instance norm over spatial dims of an NCHW tensor.

    With a single spatial element normalization would zero the activation
    outright, so 1x1 inputs pass through unchanged.
    """
    b, c, h, w = x.shape
    if h * w == 1:
        out = Tensor._from_op(x.data.copy(), (x,), None)

        def backward_id(g):
            x._accumulate(g)

        out._backward = backward_id
        return out

    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = Tensor._from_op(xhat, (x,), None)

    def backward(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        x._accumulate(inv_std * (g - gm - xhat * gxm))

    out._backward = backward
    return out


def lut_apply(lut: Tensor, pixels: Tensor) -> Tensor:
    """Trilinear LUT application as a differentiable op.

    lut is (m,m,m,3); pixels is (n,3). Gradients flow to both inputs via
    the hand-written kernel backward.
    """
    lut_data = np.ascontiguousarray(lut.data)
    pix_data = np.ascontiguousarray(pixels.data)
    out_data = np.asarray(kernels.trilerp_apply(lut_data, pix_data))
    out = Tensor._from_op(out_data, (lut, pixels), None)

    def backward(g):
        glut, gpix = kernels.trilerp_backward(lut_data, pix_data, np.ascontiguousarray(g))
        if lut.requires_grad:
            lut._accumulate(np.asarray(glut))
        if pixels.requires_grad:
            pixels._accumulate(np.asarray(gpix))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------


class Adam:
    """Adam over a list of leaf Tensors."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
