"""Planar benchmark mechanisms in three coordinate descriptions.

Systems
-------
pendulum          one link on a fixed pivot
cartpole          translating cart carrying one link
double_pendulum   two-link serial chain
fourbar           closed chain: two two-link serial chains sharing the ground
                  pivot, with their free ends pinned together (the motion
                  branch used everywhere is the parallelogram branch)

Parameterizations
-----------------
minimal   cart position plus absolute link angles (fourbar keeps all four
          angles plus a two-equation loop closure)
sincos    each angle embedded as a unit-circle point (sin a, cos a); unit
          constraints make this a constrained system
maximal   per-body planar coordinates (x, y, phi) of the center of mass with
          pin-joint constraints

Conventions
-----------
Angles are measured from the downward vertical, so u(a) = (sin a, -cos a)
points along a link and a = 0 hangs straight down.  Links are uniform rods:
center of mass at the middle, inertia m l^2 / 12 unless overridden.  Gravity
acts along -y with the potential datum at the ground pivot / cart rail
height.  In maximal coordinates phi equals the link's absolute angle.

Friction is a viscous torque/force -c * (joint rate) applied at each joint of
the ground-truth variants and mapped into the active coordinates through the
joint-rate Jacobian; nominal models carry c = 0.  Fourbar joints are ordered
(ground-chain A, elbow A, elbow B, closure pin); the second ground pin is
frictionless and the closure coefficient is fixed to zero.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, InputError, ShapeError

__all__ = [
    "SystemParams", "State", "ConstraintSet", "MechSystem",
    "KINDS", "PARAMETERIZATIONS", "FRICTION_RANGES",
    "build_system", "default_params", "energy", "random_initial_state",
    "to_reference_positions", "perturb",
]

KINDS = ("pendulum", "cartpole", "double_pendulum", "fourbar")
PARAMETERIZATIONS = ("minimal", "sincos", "maximal")

# Per-joint friction-coefficient draw ranges for the perturbed ground truth.
# Fourbar's two elbow coefficients are tied (single draw) and the closure pin
# is frictionless.
FRICTION_RANGES = {
    "pendulum": ((0.0, 1.0),),
    "cartpole": ((0.0, 0.5), (0.0, 1.0)),
    "double_pendulum": ((0.0, 2.0), (0.0, 0.5)),
    "fourbar": ((0.0, 2.0), (0.0, 0.5), (0.0, 0.5), (0.0, 0.0)),
}
_FOURBAR_TIED_JOINTS = (1, 2)   # elbow coefficients share one draw
MASS_PERTURBATION = (0.9, 1.1)

# chains: link indices per chain; joints: friction joints as tagged tuples.
_TOPOLOGY = {
    "pendulum": {"cart": False, "chains": ((0,),), "closure": False,
                 "joints": (("root", 0),)},
    "cartpole": {"cart": True, "chains": ((0,),), "closure": False,
                 "joints": (("cart",), ("root", 0))},
    "double_pendulum": {"cart": False, "chains": ((0, 1),), "closure": False,
                        "joints": (("root", 0), ("pair", 0, 1))},
    "fourbar": {"cart": False, "chains": ((0, 1), (2, 3)), "closure": True,
                "joints": (("root", 0), ("pair", 0, 1), ("pair", 2, 3),
                           ("closure", 1, 3))},
}


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters; arrays are per link (rods), cart fields separate.

    Perturbed variants store their effective masses/inertias and friction
    coefficients directly, so a serialized parameter set reproduces the
    system exactly.
    """

    masses: np.ndarray
    lengths: np.ndarray
    inertias: np.ndarray
    friction: np.ndarray
    gravity: float = 9.81
    cart_mass: float | None = None
    cart_inertia: float | None = None

    def __post_init__(self):
        for name in ("masses", "lengths", "inertias", "friction"):
            object.__setattr__(self, name,
                               np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if not (np.all(self.masses > 0) and np.all(self.lengths > 0)
                and np.all(self.inertias > 0)):
            raise InputError("masses, lengths and inertias must be positive")
        if np.any(self.friction < 0):
            raise InputError("friction coefficients must be nonnegative")
        if self.cart_mass is not None and not self.cart_mass > 0:
            raise InputError("cart mass must be positive")

    def to_dict(self) -> dict:
        return {"masses": self.masses.tolist(), "lengths": self.lengths.tolist(),
                "inertias": self.inertias.tolist(), "friction": self.friction.tolist(),
                "gravity": self.gravity, "cart_mass": self.cart_mass,
                "cart_inertia": self.cart_inertia}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemParams":
        return cls(masses=np.asarray(d["masses"]), lengths=np.asarray(d["lengths"]),
                   inertias=np.asarray(d["inertias"]), friction=np.asarray(d["friction"]),
                   gravity=d.get("gravity", 9.81), cart_mass=d.get("cart_mass"),
                   cart_inertia=d.get("cart_inertia"))


def default_params(kind: str) -> SystemParams:
    """Unit rods (m = 1 kg, l = 1 m, J = ml^2/12), frictionless."""
    if kind not in KINDS:
        raise ConfigurationError(f"unknown system kind {kind!r}")
    n_links = sum(len(c) for c in _TOPOLOGY[kind]["chains"])
    n_joints = len(_TOPOLOGY[kind]["joints"])
    m = np.ones(n_links)
    l = np.ones(n_links)
    return SystemParams(masses=m, lengths=l, inertias=m * l ** 2 / 12.0,
                        friction=np.zeros(n_joints),
                        cart_mass=1.0 if _TOPOLOGY[kind]["cart"] else None,
                        cart_inertia=(1.0 / 12.0) if _TOPOLOGY[kind]["cart"] else None)


@dataclass
class State:
    """Position/velocity pair in the active parameterization; z = [x; v]."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.x.shape != self.v.shape:
            raise ShapeError("position and velocity must have the same shape")

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.v])

    @classmethod
    def from_z(cls, z: np.ndarray) -> "State":
        z = np.asarray(z, dtype=float)
        n = z.size // 2
        return cls(z[:n], z[n:])

    def copy(self) -> "State":
        return State(self.x.copy(), self.v.copy())


class ConstraintSet:
    """Holonomic constraints g(x) = 0 with analytic Jacobian G = dg/dx.

    ``g`` maps (..., n) -> (..., m) and ``jacobian`` maps (..., n) ->
    (..., m, n); both broadcast over leading batch axes.
    """

    def __init__(self, count: int, g, jacobian):
        self.count = count
        self._g = g
        self._jac = jacobian

    def g(self, x) -> np.ndarray:
        return self._g(np.asarray(x, dtype=float))

    def jacobian(self, x) -> np.ndarray:
        return self._jac(np.asarray(x, dtype=float))

    def gamma(self, x, v) -> np.ndarray:
        """Velocity-level bias (dG/dt) v, by a central difference along v."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        h = 1e-6 / max(1.0, float(np.max(np.abs(v))))
        dG = (self._jac(x + h * v) - self._jac(x - h * v)) / (2 * h)
        return dG @ v


class MechSystem:
    """A mechanism in one parameterization; all evaluators are pure.

    Instances are immutable after construction and safe to share across
    threads/processes.
    """

    def __init__(self, kind: str, parameterization: str, params: SystemParams):
        if kind not in KINDS:
            raise ConfigurationError(f"unknown system kind {kind!r}")
        if parameterization not in PARAMETERIZATIONS:
            raise ConfigurationError(f"unknown parameterization {parameterization!r}")
        topo = _TOPOLOGY[kind]
        self.kind = kind
        self.parameterization = parameterization
        self.params = params
        self._chains = topo["chains"]
        self._joints = topo["joints"]
        self._closure = topo["closure"]
        self._has_cart = topo["cart"]

        n_links = sum(len(c) for c in self._chains)
        if params.masses.size != n_links:
            raise ConfigurationError(f"{kind} needs {n_links} link masses")
        if params.friction.size != len(self._joints):
            raise ConfigurationError(f"{kind} needs {len(self._joints)} friction values")
        self.n_links = n_links
        self.n_angles = n_links

        m, l, J = params.masses, params.lengths, params.inertias
        # a[i, j]: coefficient of angle-j rate in link-i COM velocity
        # (l_j for upstream joints of the same chain, l_i/2 for the link's own).
        a = np.zeros((n_links, n_links))
        for chain in self._chains:
            for pos, i in enumerate(chain):
                for j in chain[:pos]:
                    a[i, j] = l[j]
                a[i, i] = l[i] / 2.0
        self._a = a
        self._b = m @ a                       # b_j = sum_i m_i a_ij
        self._C = a.T @ (m[:, None] * a)      # C_jk = sum_i m_i a_ij a_ik

        if parameterization == "minimal":
            self.dim_x = (1 if self._has_cart else 0) + n_links
        elif parameterization == "sincos":
            self.dim_x = (1 if self._has_cart else 0) + 2 * n_links
        else:
            self.dim_x = 3 * ((1 if self._has_cart else 0) + n_links)

        self._cart_idx = 0 if self._has_cart else None
        self._build_mass_potential()
        self.constraints = self._build_constraints()
        if self.n_constraints >= self.dim_x:
            raise ConfigurationError("constraint count must be below dim_x")

    # ------------------------------------------------------------------ #
    # coordinate layout helpers
    # ------------------------------------------------------------------ #

    def _ang_idx(self, j: int) -> int:
        """Index of angle j in minimal coordinates."""
        return (1 if self._has_cart else 0) + j

    def _sc_idx(self, j: int):
        off = 1 if self._has_cart else 0
        return off + 2 * j, off + 2 * j + 1

    def _body_slice(self, i: int):
        """Maximal-coordinate block of link i (cart occupies block 0)."""
        off = 3 if self._has_cart else 0
        return slice(off + 3 * i, off + 3 * i + 3)

    @property
    def n_constraints(self) -> int:
        return 0 if self.constraints is None else self.constraints.count

    @property
    def is_constrained(self) -> bool:
        return self.n_constraints > 0

    @property
    def has_friction(self) -> bool:
        return bool(np.any(self.params.friction > 0))

    @property
    def n_free_joints(self) -> int:
        """Independent joint coordinates used when sampling initial states."""
        base = 1 if self._has_cart else 0
        if self.kind == "fourbar":
            return base + 2
        return base + self.n_angles

    # ------------------------------------------------------------------ #
    # mass matrix and potential
    # ------------------------------------------------------------------ #

    def _build_mass_potential(self):
        n = self.dim_x
        m, J = self.params.masses, self.params.inertias
        if self.parameterization == "minimal":
            self.mass_is_constant = self.kind == "pendulum"
            Mc = np.zeros((n, n))
            if self._has_cart:
                Mc[0, 0] = self.params.cart_mass + m.sum()
            for j in range(self.n_angles):
                Mc[self._ang_idx(j), self._ang_idx(j)] = self._C[j, j] + J[j]
            self._M_const = Mc   # position-independent part (used when constant)
        elif self.parameterization == "sincos":
            self.mass_is_constant = True
            M = np.zeros((n, n))
            if self._has_cart:
                M[0, 0] = self.params.cart_mass + m.sum()
            for j in range(self.n_angles):
                sj, cj = self._sc_idx(j)
                for k in range(self.n_angles):
                    sk, ck = self._sc_idx(k)
                    val = self._C[j, k] + (J[j] if j == k else 0.0)
                    M[sj, sk] += val
                    M[cj, ck] += val
                if self._has_cart:
                    M[0, sj] = M[sj, 0] = self._b[j]
            self._M_const = M
        else:
            self.mass_is_constant = True
            blocks = []
            if self._has_cart:
                blocks += [self.params.cart_mass, self.params.cart_mass,
                           self.params.cart_inertia]
            for i in range(self.n_links):
                blocks += [m[i], m[i], J[i]]
            self._M_const = np.diag(np.asarray(blocks, dtype=float))

    def mass_matrix(self, x) -> np.ndarray:
        if self.mass_is_constant:
            return self._M_const.copy()
        x = np.asarray(x, dtype=float)
        M = self._M_const.copy()
        th = x[self._ang_idx(0):]
        if self._has_cart:
            M[0, 1:] = M[1:, 0] = np.cos(th) * self._b
        cosdiff = np.cos(th[:, None] - th[None, :])
        off = 1 if self._has_cart else 0
        block = cosdiff * self._C
        np.fill_diagonal(block, 0.0)   # diagonal already in _M_const
        M[off:, off:] += block
        return M

    def mass_matrix_deriv(self, x) -> np.ndarray:
        """dM[i, j, l] = d M_ij / d x_l; zeros for constant-mass systems."""
        n = self.dim_x
        if self.mass_is_constant:
            return np.zeros((n, n, n))
        x = np.asarray(x, dtype=float)
        dM = np.zeros((n, n, n))
        off = 1 if self._has_cart else 0
        th = x[off:]
        sindiff = np.sin(th[:, None] - th[None, :])
        for j in range(self.n_angles):
            for k in range(self.n_angles):
                if j == k or self._C[j, k] == 0.0:
                    continue
                val = -sindiff[j, k] * self._C[j, k]
                dM[off + j, off + k, off + j] += val
                dM[off + j, off + k, off + k] -= val
        if self._has_cart:
            for j in range(self.n_angles):
                dM[0, off + j, off + j] = dM[off + j, 0, off + j] = \
                    -np.sin(th[j]) * self._b[j]
        return dM

    def kinetic(self, x, v) -> float:
        return 0.5 * float(np.asarray(v) @ self.mass_matrix(x) @ np.asarray(v))

    def kinetic_x_grad(self, x, v) -> np.ndarray:
        """0.5 * d(v^T M(x) v)/dx; zero for constant mass matrices."""
        if self.mass_is_constant:
            return np.zeros(self.dim_x)
        dM = self.mass_matrix_deriv(x)
        v = np.asarray(v, dtype=float)
        return 0.5 * np.einsum("ijl,i,j->l", dM, v, v)

    def kinetic_x_grad_jac_v(self, x, v) -> np.ndarray:
        """Jacobian of kinetic_x_grad with respect to v (rows follow x)."""
        if self.mass_is_constant:
            return np.zeros((self.dim_x, self.dim_x))
        dM = self.mass_matrix_deriv(x)
        return np.einsum("jmi,m->ij", dM, np.asarray(v, dtype=float))

    def potential(self, x) -> float:
        x = np.asarray(x, dtype=float)
        g = self.params.gravity
        if self.parameterization == "minimal":
            th = x[self._ang_idx(0):]
            return float(-g * np.sum(self._b * np.cos(th)))
        if self.parameterization == "sincos":
            c = x[[self._sc_idx(j)[1] for j in range(self.n_angles)]]
            return float(-g * np.sum(self._b * c))
        val = 0.0
        if self._has_cart:
            val += self.params.cart_mass * g * x[1]
        for i in range(self.n_links):
            val += self.params.masses[i] * g * x[self._body_slice(i)][1]
        return float(val)

    def potential_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = self.params.gravity
        grad = np.zeros(self.dim_x)
        if self.parameterization == "minimal":
            th = x[self._ang_idx(0):]
            grad[self._ang_idx(0):] = g * self._b * np.sin(th)
        elif self.parameterization == "sincos":
            for j in range(self.n_angles):
                grad[self._sc_idx(j)[1]] = -g * self._b[j]
        else:
            if self._has_cart:
                grad[1] = self.params.cart_mass * g
            off = 3 if self._has_cart else 0
            for i in range(self.n_links):
                grad[off + 3 * i + 1] = self.params.masses[i] * g
        return grad

    def lagrangian(self, x, v) -> float:
        """L(x, v) = T - V, defined for arbitrary (off-manifold) arguments."""
        return self.kinetic(x, v) - self.potential(x)

    def energy(self, state: State) -> float:
        return self.kinetic(state.x, state.v) + self.potential(state.x)

    # ------------------------------------------------------------------ #
    # constraints
    # ------------------------------------------------------------------ #

    def _build_constraints(self):
        if self.parameterization == "minimal":
            if not self._closure:
                return None
            return self._closure_constraints_minimal()
        if self.parameterization == "sincos":
            return self._constraints_sincos()
        return self._constraints_maximal()

    def _closure_constraints_minimal(self):
        l = self.params.lengths
        chain_a, chain_b = self._chains
        off = 1 if self._has_cart else 0

        def g(x):
            th = x[..., off:]
            tip = lambda chain, sgn: sum(
                sgn * l[j] * np.stack([np.sin(th[..., j]), -np.cos(th[..., j])], axis=-1)
                for j in chain)
            return tip(chain_a, 1.0) + tip(chain_b, -1.0)

        def jac(x):
            th = x[..., off:]
            G = np.zeros(x.shape[:-1] + (2, self.dim_x))
            for chain, sgn in ((chain_a, 1.0), (chain_b, -1.0)):
                for j in chain:
                    G[..., 0, off + j] = sgn * l[j] * np.cos(th[..., j])
                    G[..., 1, off + j] = sgn * l[j] * np.sin(th[..., j])
            return G

        return ConstraintSet(2, g, jac)

    def _constraints_sincos(self):
        l = self.params.lengths
        idx = [self._sc_idx(j) for j in range(self.n_angles)]
        closure = self._closure
        chains = self._chains
        m = self.n_angles + (2 if closure else 0)

        def g(x):
            parts = [x[..., s] ** 2 + x[..., c] ** 2 - 1.0 for s, c in idx]
            out = np.stack(parts, axis=-1)
            if closure:
                cx = sum(l[j] * x[..., idx[j][0]] for j in chains[0]) \
                    - sum(l[j] * x[..., idx[j][0]] for j in chains[1])
                cy = sum(-l[j] * x[..., idx[j][1]] for j in chains[0]) \
                    - sum(-l[j] * x[..., idx[j][1]] for j in chains[1])
                out = np.concatenate([out, np.stack([cx, cy], axis=-1)], axis=-1)
            return out

        def jac(x):
            G = np.zeros(x.shape[:-1] + (m, self.dim_x))
            for j, (s, c) in enumerate(idx):
                G[..., j, s] = 2 * x[..., s]
                G[..., j, c] = 2 * x[..., c]
            if closure:
                for chain, sgn in ((chains[0], 1.0), (chains[1], -1.0)):
                    for j in chain:
                        G[..., self.n_angles, idx[j][0]] = sgn * l[j]
                        G[..., self.n_angles + 1, idx[j][1]] = -sgn * l[j]
            return G

        return ConstraintSet(m, g, jac)

    def _constraints_maximal(self):
        l = self.params.lengths
        rows = []          # (kind, data) descriptors, resolved in g/jac
        if self._has_cart:
            rows.append(("cart", None))
        for chain in self._chains:
            rows.append(("root", chain[0]))
            for prev, nxt in zip(chain[:-1], chain[1:]):
                rows.append(("pair", (prev, nxt)))
        if self._closure:
            rows.append(("pin_tips", (self._chains[0][-1], self._chains[1][-1])))
        m = 2 * len(rows)
        off = 3 if self._has_cart else 0

        def anchor(x, i, end):
            """end = -1 proximal, +1 distal anchor of link i."""
            blk = off + 3 * i
            phi = x[..., blk + 2]
            ax = x[..., blk] + end * (l[i] / 2) * np.sin(phi)
            ay = x[..., blk + 1] - end * (l[i] / 2) * np.cos(phi)
            return ax, ay

        def base_point(x):
            if self._has_cart:
                return x[..., 0], x[..., 1]
            zeros = np.zeros(x.shape[:-1])
            return zeros, zeros

        def g(x):
            out = np.zeros(x.shape[:-1] + (m,))
            r = 0
            for kind, data in rows:
                if kind == "cart":
                    out[..., r] = x[..., 1]
                    out[..., r + 1] = x[..., 2]
                elif kind == "root":
                    ax, ay = anchor(x, data, -1)
                    bx, by = base_point(x)
                    out[..., r] = ax - bx
                    out[..., r + 1] = ay - by
                elif kind == "pair":
                    prev, nxt = data
                    ax, ay = anchor(x, prev, +1)
                    bx, by = anchor(x, nxt, -1)
                    out[..., r] = ax - bx
                    out[..., r + 1] = ay - by
                else:
                    ia, ib = data
                    ax, ay = anchor(x, ia, +1)
                    bx, by = anchor(x, ib, +1)
                    out[..., r] = ax - bx
                    out[..., r + 1] = ay - by
                r += 2
            return out

        def fill_anchor(G, x, r, i, end, sign):
            blk = off + 3 * i
            phi = x[..., blk + 2]
            G[..., r, blk] += sign
            G[..., r, blk + 2] += sign * end * (l[i] / 2) * np.cos(phi)
            G[..., r + 1, blk + 1] += sign
            G[..., r + 1, blk + 2] += sign * end * (l[i] / 2) * np.sin(phi)

        def jac(x):
            G = np.zeros(x.shape[:-1] + (m, self.dim_x))
            r = 0
            for kind, data in rows:
                if kind == "cart":
                    G[..., r, 1] = 1.0
                    G[..., r + 1, 2] = 1.0
                elif kind == "root":
                    fill_anchor(G, x, r, data, -1, +1.0)
                    if self._has_cart:
                        G[..., r, 0] -= 1.0
                        G[..., r + 1, 1] -= 1.0
                elif kind == "pair":
                    prev, nxt = data
                    fill_anchor(G, x, r, prev, +1, +1.0)
                    fill_anchor(G, x, r, nxt, -1, -1.0)
                else:
                    ia, ib = data
                    fill_anchor(G, x, r, ia, +1, +1.0)
                    fill_anchor(G, x, r, ib, +1, -1.0)
                r += 2
            return G

        return ConstraintSet(m, g, jac)

    # ------------------------------------------------------------------ #
    # friction
    # ------------------------------------------------------------------ #

    def joint_rate_matrix(self, x) -> np.ndarray:
        """Rows map coordinate velocities to joint rates (J_r v)."""
        x = np.asarray(x, dtype=float)
        Jr = np.zeros((len(self._joints), self.dim_x))

        def angle_rate_row(row, j, sign):
            if self.parameterization == "minimal":
                Jr[row, self._ang_idx(j)] += sign
            elif self.parameterization == "sincos":
                s, c = self._sc_idx(j)
                Jr[row, s] += sign * x[c]
                Jr[row, c] -= sign * x[s]
            else:
                blk = self._body_slice(j)
                Jr[row, blk.start + 2] += sign

        for row, joint in enumerate(self._joints):
            if joint[0] == "cart":
                Jr[row, 0] = 1.0
            elif joint[0] == "root":
                angle_rate_row(row, joint[1], +1.0)
            else:   # pair / closure: relative rate
                angle_rate_row(row, joint[1], -1.0)
                angle_rate_row(row, joint[2], +1.0)
        return Jr

    def friction_force(self, x, v) -> np.ndarray:
        """Generalized viscous force -J_r^T diag(c) J_r v (dissipative)."""
        if not self.has_friction:
            return np.zeros(self.dim_x)
        Jr = self.joint_rate_matrix(x)
        rates = Jr @ np.asarray(v, dtype=float)
        return -Jr.T @ (self.params.friction * rates)

    # ------------------------------------------------------------------ #
    # kinematics
    # ------------------------------------------------------------------ #

    def state_from_joint_space(self, q, qd) -> State:
        """Map a minimal-coordinate description into this parameterization.

        ``q``/``qd`` are laid out as the minimal coordinates: optional cart
        position first, then the absolute link angles.
        """
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        off = 1 if self._has_cart else 0
        if q.size != off + self.n_angles:
            raise ShapeError("joint-space vector has the wrong length")
        th, thd = q[off:], qd[off:]
        if self.parameterization == "minimal":
            return State(q.copy(), qd.copy())
        if self.parameterization == "sincos":
            x = np.zeros(self.dim_x)
            v = np.zeros(self.dim_x)
            if self._has_cart:
                x[0], v[0] = q[0], qd[0]
            for j in range(self.n_angles):
                s, c = self._sc_idx(j)
                x[s], x[c] = np.sin(th[j]), np.cos(th[j])
                v[s], v[c] = np.cos(th[j]) * thd[j], -np.sin(th[j]) * thd[j]
            return State(x, v)
        x = np.zeros(self.dim_x)
        v = np.zeros(self.dim_x)
        if self._has_cart:
            x[0], v[0] = q[0], qd[0]
        u = np.stack([np.sin(th), -np.cos(th)], axis=-1)
        du = np.stack([np.cos(th), np.sin(th)], axis=-1)
        base = np.array([q[0], 0.0]) if self._has_cart else np.zeros(2)
        dbase = np.array([qd[0], 0.0]) if self._has_cart else np.zeros(2)
        off3 = 3 if self._has_cart else 0
        for i in range(self.n_links):
            r = base + self._a[i] @ u
            dr = dbase + (self._a[i] * thd) @ du
            x[off3 + 3 * i: off3 + 3 * i + 2] = r
            x[off3 + 3 * i + 2] = th[i]
            v[off3 + 3 * i: off3 + 3 * i + 2] = dr
            v[off3 + 3 * i + 2] = thd[i]
        return State(x, v)

    def position_from_joint_space(self, q) -> np.ndarray:
        """Position part of the joint-space mapping (see
        ``state_from_joint_space``)."""
        return self.state_from_joint_space(q, np.zeros_like(np.asarray(q))).x

    def sample_joint_space(self, rng) -> tuple:
        """Random joint-space state: angles U[-pi, pi], rates U[-1, 1],
        cart position/velocity U[-1, 1]; the fourbar mirrors chain A onto
        chain B (parallelogram branch) so closure holds exactly."""
        off = 1 if self._has_cart else 0
        n_free_ang = self.n_free_joints - off
        q = np.empty(off + self.n_angles)
        qd = np.empty_like(q)
        if self._has_cart:
            q[0] = rng.uniform(-1.0, 1.0)
        ang = rng.uniform(-np.pi, np.pi, size=n_free_ang)
        if self._has_cart:
            qd[0] = rng.uniform(-1.0, 1.0)
        rate = rng.uniform(-1.0, 1.0, size=n_free_ang)
        if self.kind == "fourbar":
            q[off:] = np.concatenate([ang, ang[::-1]])
            qd[off:] = np.concatenate([rate, rate[::-1]])
        else:
            q[off:] = ang
            qd[off:] = rate
        return q, qd

    def to_reference_positions(self, state: State) -> np.ndarray:
        """Cartesian reference points (cart position, then link endpoints).

        The same physical configuration yields the same array in every
        parameterization, which makes multi-step position errors comparable
        across coordinate descriptions.
        """
        x = state.x
        pts = []
        if self.parameterization == "maximal":
            off = 3 if self._has_cart else 0
            if self._has_cart:
                pts.append([x[0], x[1]])
            for i in range(self.n_links):
                blk = off + 3 * i
                phi = x[blk + 2]
                pts.append([x[blk] + (self.params.lengths[i] / 2) * np.sin(phi),
                            x[blk + 1] - (self.params.lengths[i] / 2) * np.cos(phi)])
            return np.asarray(pts)
        if self.parameterization == "minimal":
            offc = 1 if self._has_cart else 0
            uvec = {j: np.array([np.sin(x[offc + j]), -np.cos(x[offc + j])])
                    for j in range(self.n_angles)}
        else:
            uvec = {}
            for j in range(self.n_angles):
                s, c = self._sc_idx(j)
                uvec[j] = np.array([x[s], -x[c]])
        base = np.array([x[0], 0.0]) if self._has_cart else np.zeros(2)
        if self._has_cart:
            pts.append(base.copy())
        for chain in self._chains:
            pt = base.copy()
            for j in chain:
                pt = pt + self.params.lengths[j] * uvec[j]
                pts.append(pt.copy())
        return np.asarray(pts)

    # ------------------------------------------------------------------ #
    # serialization
    # ------------------------------------------------------------------ #

    def config_dict(self) -> dict:
        return {"kind": self.kind, "parameterization": self.parameterization,
                "params": self.params.to_dict()}

    @classmethod
    def from_config(cls, d: dict) -> "MechSystem":
        return cls(d["kind"], d["parameterization"],
                   SystemParams.from_dict(d["params"]))


def build_system(kind: str, parameterization: str,
                 params: SystemParams | None = None) -> MechSystem:
    """Construct one of the benchmark systems; default unit parameters."""
    if params is None:
        params = default_params(kind)
    return MechSystem(kind, parameterization, params)


def energy(system: MechSystem, state: State) -> float:
    """Total energy, kinetic plus potential (parameterization-invariant)."""
    return system.energy(state)


def random_initial_state(system: MechSystem, rng) -> State:
    """Constraint-satisfying random state (see ``sample_joint_space``)."""
    q, qd = system.sample_joint_space(rng)
    return system.state_from_joint_space(q, qd)


def to_reference_positions(system: MechSystem, state: State) -> np.ndarray:
    return system.to_reference_positions(state)


def perturb(system: MechSystem, rng) -> MechSystem:
    """Ground-truth variant: masses/inertias scaled by independent
    U[0.9, 1.1] draws, friction drawn per joint from fixed per-system ranges.

    Draw order (fixed for reproducibility): cart mass factor, link mass
    factors, cart inertia factor, link inertia factors, friction
    coefficients.  The fourbar elbow coefficients share one draw and its
    closure coefficient stays zero.
    """
    p = system.params
    if system.has_friction:
        raise InputError("perturb expects a nominal (frictionless) model")
    lo, hi = MASS_PERTURBATION
    cart_mass = p.cart_mass
    cart_inertia = p.cart_inertia
    if cart_mass is not None:
        cart_mass = cart_mass * rng.uniform(lo, hi)
    masses = p.masses * rng.uniform(lo, hi, size=p.masses.size)
    if cart_inertia is not None:
        cart_inertia = cart_inertia * rng.uniform(lo, hi)
    inertias = p.inertias * rng.uniform(lo, hi, size=p.inertias.size)

    ranges = FRICTION_RANGES[system.kind]
    friction = np.zeros(len(ranges))
    if system.kind == "fourbar":
        friction[0] = rng.uniform(*ranges[0])
        tied = rng.uniform(*ranges[_FOURBAR_TIED_JOINTS[0]])
        for j in _FOURBAR_TIED_JOINTS:
            friction[j] = tied
        friction[3] = 0.0
    else:
        for j, (a, b) in enumerate(ranges):
            friction[j] = rng.uniform(a, b)

    new_params = replace(p, masses=masses, inertias=inertias, friction=friction,
                         cart_mass=cart_mass, cart_inertia=cart_inertia)
    return MechSystem(system.kind, system.parameterization, new_params)
