"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The tape is implicit: each Tensor records its parents and a local backward
rule, and `backward()` runs a topological sweep from a scalar root.  Tapes
are rebuilt on every forward pass; nothing is retained between passes.
Everything is 64-bit.
"""

import json

import numpy as np


class Tensor:
    """A node in the computation tape.

    data and grad always have the same shape.  Leaf tensors (parameters)
    keep their grad across backward calls until `zero_grad` is called on
    the collection.
    """

    __slots__ = ("data", "grad", "_parents", "_backward", "name")

    def __init__(self, data, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def detach(self):
        """Stop-gradient: same values, no tape history."""
        return Tensor(self.data.copy())

    # ---- arithmetic ----

    def __add__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def bwd(g):
            _accum(self, _unbroadcast(g, self.shape))
            _accum(other, _unbroadcast(g, other.shape))

        out._backward = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: _accum(self, -g)
        return out

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def bwd(g):
            _accum(self, _unbroadcast(g * other.data, self.shape))
            _accum(other, _unbroadcast(g * self.data, other.shape))

        out._backward = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return _as_tensor(other) * self ** -1.0

    def __pow__(self, p):
        assert np.isscalar(p)
        out = Tensor(self.data ** p, (self,))
        out._backward = lambda g: _accum(self, g * p * self.data ** (p - 1))
        return out

    def __matmul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data @ other.data, (self, other))

        def bwd(g):
            a, b = self.data, other.data
            if a.ndim == 1 and b.ndim == 2:
                _accum(self, g @ b.T)
                _accum(other, np.outer(a, g))
            elif a.ndim == 2 and b.ndim == 2:
                _accum(self, g @ b.T)
                _accum(other, a.T @ g)
            elif a.ndim == 2 and b.ndim == 1:
                _accum(self, np.outer(g, b))
                _accum(other, a.T @ g)
            else:
                raise ValueError(f"unsupported matmul shapes {a.shape} @ {b.shape}")

        out._backward = bwd
        return out

    # ---- reductions / shaping ----

    def sum(self, axis=None):
        out = Tensor(self.data.sum(axis=axis), (self,))

        def bwd(g):
            if axis is None:
                _accum(self, np.broadcast_to(g, self.shape))
            else:
                _accum(self, np.broadcast_to(np.expand_dims(g, axis), self.shape))

        out._backward = bwd
        return out

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))
        out._backward = lambda g: _accum(self, g.reshape(self.shape))
        return out

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], (self,))

        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            _accum(self, full)

        out._backward = bwd
        return out

    # ---- backward pass ----

    def backward(self):
        if self.data.shape != ():
            raise ValueError("backward() requires a scalar root")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g):
    t.grad = t.grad + g


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---- elementwise nonlinearities ----

def exp(x):
    out = Tensor(np.exp(x.data), (x,))
    out._backward = lambda g: _accum(x, g * out.data)
    return out


def log(x):
    out = Tensor(np.log(x.data), (x,))
    out._backward = lambda g: _accum(x, g / x.data)
    return out


def tanh(x):
    out = Tensor(np.tanh(x.data), (x,))
    out._backward = lambda g: _accum(x, g * (1.0 - out.data ** 2))
    return out


def sigmoid(x):
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s, (x,))
    out._backward = lambda g: _accum(x, g * s * (1.0 - s))
    return out


def relu(x):
    out = Tensor(np.maximum(x.data, 0.0), (x,))
    out._backward = lambda g: _accum(x, g * (x.data > 0.0))
    return out


def elu(x):
    e = np.where(x.data > 0.0, x.data, np.expm1(np.minimum(x.data, 0.0)))
    out = Tensor(e, (x,))
    out._backward = lambda g: _accum(x, g * np.where(x.data > 0.0, 1.0, e + 1.0))
    return out


def clamp(x, lo, hi):
    """Hard clamp; gradient is 1 inside [lo, hi], 0 outside."""
    out = Tensor(np.clip(x.data, lo, hi), (x,))
    mask = (x.data >= lo) & (x.data <= hi)
    out._backward = lambda g: _accum(x, g * mask)
    return out


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    out._backward = bwd
    return out


ACTIVATIONS = {
    "elu": elu,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "identity": lambda x: x,
}


# ---- parameter collections ----

class Params(dict):
    """Flat name -> Tensor mapping for one network or the whole model."""

    def zero_grad(self):
        for t in self.values():
            t.grad = np.zeros_like(t.data)

    def copy_values(self):
        return {k: t.data.copy() for k, t in self.items()}

    def load_values(self, values):
        for k, t in self.items():
            t.data = np.asarray(values[k], dtype=np.float64).reshape(t.data.shape)


class Mlp:
    """Plain MLP; dims = [in, h1, ..., out], one activation per layer."""

    def __init__(self, dims, activations=None, hidden_act="elu", out_act="identity",
                 rng=None, scale=None, prefix="mlp"):
        if activations is None:
            activations = [hidden_act] * (len(dims) - 2) + [out_act]
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per layer")
        self.dims = list(dims)
        self.activations = list(activations)
        self.params = Params()
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            s = scale if scale is not None else 1.0 / np.sqrt(din)
            w = rng.normal(0.0, s, size=(din, dout)) if rng is not None else np.zeros((din, dout))
            self.params[f"{prefix}.w{i}"] = Tensor(w)
            self.params[f"{prefix}.b{i}"] = Tensor(np.zeros(dout))
        self.prefix = prefix

    def __call__(self, x):
        for i, act in enumerate(self.activations):
            x = x @ self.params[f"{self.prefix}.w{i}"] + self.params[f"{self.prefix}.b{i}"]
            x = ACTIVATIONS[act](x)
        return x


def mlp_forward(mlp, x):
    if x.data.shape[-1] != mlp.dims[0]:
        raise ValueError(f"input dim {x.data.shape[-1]} != {mlp.dims[0]}")
    return mlp(x)


class GruCell:
    """Standard GRU cell; h' = (1-z)*h + z*tanh(candidate)."""

    def __init__(self, input_dim, hidden_dim, rng=None, prefix="gru"):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.params = Params()
        for gate in ("z", "r", "c"):
            sw = 1.0 / np.sqrt(input_dim)
            su = 1.0 / np.sqrt(hidden_dim)
            w = rng.normal(0.0, sw, size=(input_dim, hidden_dim)) if rng is not None else np.zeros((input_dim, hidden_dim))
            u = rng.normal(0.0, su, size=(hidden_dim, hidden_dim)) if rng is not None else np.zeros((hidden_dim, hidden_dim))
            self.params[f"{prefix}.w_{gate}"] = Tensor(w)
            self.params[f"{prefix}.u_{gate}"] = Tensor(u)
            self.params[f"{prefix}.b_{gate}"] = Tensor(np.zeros(hidden_dim))
        self.prefix = prefix

    def __call__(self, h_prev, x):
        p = self.params
        pre = self.prefix
        z = sigmoid(x @ p[f"{pre}.w_z"] + h_prev @ p[f"{pre}.u_z"] + p[f"{pre}.b_z"])
        r = sigmoid(x @ p[f"{pre}.w_r"] + h_prev @ p[f"{pre}.u_r"] + p[f"{pre}.b_r"])
        cand = tanh(x @ p[f"{pre}.w_c"] + (r * h_prev) @ p[f"{pre}.u_c"] + p[f"{pre}.b_c"])
        one = Tensor(np.ones_like(z.data))
        return (one - z) * h_prev + z * cand


def gru_step(cell, h_prev, x):
    if x.data.shape[-1] != cell.input_dim or h_prev.data.shape[-1] != cell.hidden_dim:
        raise ValueError("gru_step dimension mismatch")
    return cell(h_prev, x)


# ---- optimizer ----

class Adam:
    """Adam with global-norm gradient clipping applied before the moments."""

    def __init__(self, params, lr=6e-4, betas=(0.9, 0.999), eps=1e-8, clip_norm=100.0):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self):
        for k, t in self.params.items():
            if not np.all(np.isfinite(t.grad)):
                raise FloatingPointError(f"non-finite gradient for parameter '{k}'")
        sq = sum(float(np.sum(t.grad ** 2)) for t in self.params.values())
        norm = np.sqrt(sq)
        scale = 1.0 if norm <= self.clip_norm else self.clip_norm / norm
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, t in self.params.items():
            g = t.grad * scale
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g ** 2
            m_hat = self.m[k] / c1
            v_hat = self.v[k] / c2
            t.data = t.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(opt, grads=None):
    """Apply one Adam update.  If `grads` is given, install it first."""
    if grads is not None:
        for k, g in grads.items():
            opt.params[k].grad = np.asarray(g, dtype=np.float64)
    opt.step()


# ---- checkpoint IO: JSON manifest + little-endian float64 blob ----

def save_params(path_prefix, params):
    manifest = []
    blob = bytearray()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": len(blob)})
        blob.extend(arr.tobytes())
    with open(path_prefix + ".json", "w") as f:
        json.dump({"dtype": "<f8", "tensors": manifest}, f, indent=1)
    with open(path_prefix + ".bin", "wb") as f:
        f.write(bytes(blob))


def load_params(path_prefix, params):
    with open(path_prefix + ".json") as f:
        manifest = json.load(f)
    with open(path_prefix + ".bin", "rb") as f:
        blob = f.read()
    for entry in manifest["tensors"]:
        name, shape, off = entry["name"], tuple(entry["shape"]), entry["offset"]
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        params[name].data = arr.astype(np.float64).copy()


# ---- finite differences (shared oracle for gradient checks) ----

def finite_difference_grad(f, params, names=None, eps=1e-5):
    """Central finite differences of scalar f() w.r.t. each named parameter."""
    names = list(params) if names is None else names
    grads = {}
    for k in names:
        t = params[k]
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = float(f())
            flat[i] = old - eps
            fm = float(f())
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * eps)
        grads[k] = g
    return grads
