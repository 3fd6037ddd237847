"""Method coefficients in Shu-Osher and Butcher form.

The Shu-Osher form is the stored representation of every method; Butcher
matrices are always derived from it with :func:`to_butcher`.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

IMPLICIT = "implicit-two-derivative"
IMEX = "imex-multi-derivative"
# Explicit forward-Euler pairs act on the stiff operator itself (classical DIRK).
DIRK = "diagonally-implicit"
KINDS = (IMPLICIT, IMEX, DIRK)

DESIGN_ORDER_TOL = 1e-12


class TableauError(ValueError):
    """Raised for malformed coefficient sets or unreadable tableau files."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ShuOsherTableau:
    """An s-stage method in SSP-revealing Shu-Osher form.

    Stage i reads ``Re[i] u^n + sum_j P[i,j] u_j + sum_j W[i,j] (u_j + dt/r F(u_j))
    + dt D[i] G(u_i) + dt^2 Ddot[i] Gdot(u_i)``. ``D`` and ``Ddot`` hold the
    diagonals only.
    """

    name: str
    kind: str
    P: np.ndarray
    W: np.ndarray
    D: np.ndarray
    Ddot: np.ndarray
    r: float = 1.0
    Re: np.ndarray | None = None
    design_order: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TableauError(f"unknown method kind {self.kind!r}")
        D = np.atleast_1d(np.asarray(self.D, dtype=float))
        s = D.shape[0]
        P = np.asarray(self.P, dtype=float)
        W = np.zeros((s, s)) if self.W is None else np.asarray(self.W, dtype=float)
        Ddot = np.atleast_1d(np.asarray(self.Ddot, dtype=float))
        for nm, m in (("P", P), ("W", W)):
            if m.shape != (s, s):
                raise TableauError(f"{nm} must be {s}x{s}, got {m.shape}")
            if np.any(np.triu(m) != 0.0):
                raise TableauError(f"{nm} must be strictly lower triangular")
        if Ddot.shape != (s,):
            raise TableauError(f"diag_Ddot must have {s} entries")
        if self.kind == IMPLICIT and np.any(W != 0.0):
            raise TableauError("W must vanish for an implicit two-derivative method")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise TableauError("r must be a positive finite number")
        Re = 1.0 - P.sum(axis=1) - W.sum(axis=1)
        if self.Re is not None:
            given = np.atleast_1d(np.asarray(self.Re, dtype=float))
            if given.shape != (s,):
                raise TableauError(f"Re must have {s} entries")
            bad = np.abs(given - Re) > 1e-12
            if np.any(bad):
                i = int(np.argmax(bad))
                raise TableauError(
                    f"Re[{i + 1}] = {given[i]!r} but 1 - row sum of P + W is {Re[i]!r}"
                )
            Re = given
        for nm, val in (("P", P), ("W", W), ("D", D), ("Ddot", Ddot), ("Re", Re)):
            object.__setattr__(self, nm, _frozen(val))
        object.__setattr__(self, "r", float(self.r))

    @property
    def s(self) -> int:
        return self.D.shape[0]

    @property
    def R(self) -> np.ndarray:
        return np.eye(self.s) - self.P - self.W


@dataclass(frozen=True)
class ButcherTableau:
    """Butcher form: explicit weights ``Ahat`` plus implicit ``A``/``Adot``."""

    kind: str
    Ahat: np.ndarray
    A: np.ndarray
    Adot: np.ndarray

    def __post_init__(self):
        for nm in ("Ahat", "A", "Adot"):
            object.__setattr__(self, nm, _frozen(getattr(self, nm)))

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def b(self) -> np.ndarray:
        return self.A[-1]

    @property
    def bhat(self) -> np.ndarray:
        return self.Ahat[-1]

    @property
    def bdot(self) -> np.ndarray:
        return self.Adot[-1]

    @property
    def c(self) -> np.ndarray:
        return self.A.sum(axis=1)

    @property
    def chat(self) -> np.ndarray:
        return self.Ahat.sum(axis=1)

    @property
    def cdot(self) -> np.ndarray:
        return self.Adot.sum(axis=1)


@dataclass
class SspValidationReport:
    violations: list[tuple[str, int, int, float]] = field(default_factory=list)

    @property
    def passes(self) -> bool:
        return not self.violations

    def format(self) -> str:
        if self.passes:
            return "SSP sign conditions: pass"
        lines = ["SSP sign conditions: FAIL"]
        for name, i, j, v in self.violations:
            lines.append(f"  {name}[{i},{j}] = {v!r}")
        return "\n".join(lines)


@dataclass
class OrderConditionReport:
    target_order: int
    residuals: list[tuple[str, float]]

    @property
    def max_abs_residual(self) -> float:
        return max((abs(v) for _, v in self.residuals), default=0.0)

    @property
    def passes(self) -> bool:
        return self.max_abs_residual < DESIGN_ORDER_TOL

    def format(self) -> str:
        head = (
            f"order {self.target_order} conditions: "
            f"{'pass' if self.passes else 'FAIL'} (max |residual| = {self.max_abs_residual:.3e})"
        )
        body = [f"  {label:<40s} {res:+.3e}" for label, res in self.residuals]
        return "\n".join([head, *body])


def to_butcher(t: ShuOsherTableau) -> ButcherTableau:
    """Convert to Butcher form: ``Ahat = R^-1 W / r``, ``A = R^-1 D``, ``Adot = R^-1 Ddot``."""
    R = t.R
    A = solve_triangular(R, np.diag(t.D), lower=True)
    Adot = solve_triangular(R, np.diag(t.Ddot), lower=True)
    Ahat = solve_triangular(R, t.W, lower=True) / t.r
    return ButcherTableau(kind=t.kind, Ahat=Ahat, A=A, Adot=Adot)


def validate_ssp_signs(t: ShuOsherTableau) -> SspValidationReport:
    """Check ``Re >= 0, P >= 0, W >= 0, D >= 0, Ddot <= 0`` with exact comparisons.

    A diagonally implicit method additionally reports every nonzero ``W``
    entry, since those are explicit evaluations of the stiff operator.
    """
    rep = SspValidationReport()
    s = t.s
    for i in range(s):
        if t.Re[i] < 0.0:
            rep.violations.append(("Re", i + 1, 1, float(t.Re[i])))
    for name, m in (("P", t.P), ("W", t.W)):
        for i in range(s):
            for j in range(i):
                v = m[i, j]
                if v < 0.0 or (t.kind == DIRK and name == "W" and v != 0.0):
                    rep.violations.append((name, i + 1, j + 1, float(v)))
    for i in range(s):
        if t.D[i] < 0.0:
            rep.violations.append(("D", i + 1, i + 1, float(t.D[i])))
        if t.Ddot[i] > 0.0:
            rep.violations.append(("Ddot", i + 1, i + 1, float(t.Ddot[i])))
    return rep


def _implicit_conditions(A, Adot, target_order):
    e = np.ones(A.shape[0])
    b, bd = A[-1], Adot[-1]
    c, cd = A @ e, Adot @ e
    conds = [(1, "b'e = 1", b @ e - 1.0)]
    conds.append((2, "b'c + ḃ'e = 1/2", b @ c + bd @ e - 0.5))
    if target_order >= 3:
        conds += [
            (3, "b'c² + 2ḃ'c = 1/3", b @ c**2 + 2 * bd @ c - 1 / 3),
            (3, "b'Ac + b'ċ + ḃ'c = 1/6", b @ A @ c + b @ cd + bd @ c - 1 / 6),
        ]
    if target_order >= 4:
        bc = b * c
        conds += [
            (4, "b'c³ + 3ḃ'c² = 1/4", b @ c**3 + 3 * bd @ c**2 - 0.25),
            (
                4,
                "b'cAc + b'cċ + ḃ'c² + ḃ'Ac + ḃ'ċ = 1/8",
                bc @ A @ c + bc @ cd + bd @ c**2 + bd @ A @ c + bd @ cd - 0.125,
            ),
            (4, "b'Ac² + 2b'Ȧc + ḃ'c² = 1/12", b @ A @ c**2 + 2 * b @ Adot @ c + bd @ c**2 - 1 / 12),
            (
                4,
                "b'A²c + b'Aċ + b'Ȧc + ḃ'Ac + ḃ'ċ = 1/24",
                b @ A @ A @ c + b @ A @ cd + b @ Adot @ c + bd @ A @ c + bd @ cd - 1 / 24,
            ),
        ]
    return conds


def _imex_conditions(bt: ButcherTableau, target_order):
    A, Ah = bt.A, bt.Ahat
    e = np.ones(bt.s)
    b, bh, bd = bt.b, bt.bhat, bt.bdot
    c, ch, cd = bt.c, bt.chat, bt.cdot
    conds = [(1, "b'e = 1", b @ e - 1.0), (1, "b̂'e = 1", bh @ e - 1.0)]
    conds += [
        (2, "b'c + ḃ'e = 1/2", b @ c + bd @ e - 0.5),
        (2, "b'ĉ = 1/2", b @ ch - 0.5),
        (2, "b̂'c = 1/2", bh @ c - 0.5),
        (2, "b̂'ĉ = 1/2", bh @ ch - 0.5),
    ]
    if target_order >= 3:
        conds += [
            (3, "b'Ac + ḃ'c + b'ċ = 1/6", b @ A @ c + bd @ c + b @ cd - 1 / 6),
            (3, "b'Aĉ + ḃ'ĉ = 1/6", b @ A @ ch + bd @ ch - 1 / 6),
            (3, "b'Âc = 1/6", b @ Ah @ c - 1 / 6),
            (3, "b'Âĉ = 1/6", b @ Ah @ ch - 1 / 6),
            (3, "b̂'Ac + b̂'ċ = 1/6", bh @ A @ c + bh @ cd - 1 / 6),
            (3, "b̂'Aĉ = 1/6", bh @ A @ ch - 1 / 6),
            (3, "b̂'Âc = 1/6", bh @ Ah @ c - 1 / 6),
            (3, "b̂'Âĉ = 1/6", bh @ Ah @ ch - 1 / 6),
            (3, "b'(c·c) + 2ḃ'c = 1/3", b @ (c * c) + 2 * bd @ c - 1 / 3),
            (3, "b'(c·ĉ) + ḃ'ĉ = 1/3", b @ (c * ch) + bd @ ch - 1 / 3),
            (3, "b'(ĉ·ĉ) = 1/3", b @ (ch * ch) - 1 / 3),
            (3, "b̂'(c·c) = 1/3", bh @ (c * c) - 1 / 3),
            (3, "b̂'(c·ĉ) = 1/3", bh @ (c * ch) - 1 / 3),
            (3, "b̂'(ĉ·ĉ) = 1/3", bh @ (ch * ch) - 1 / 3),
        ]
    return conds


def check_order_conditions(t: ButcherTableau, target_order: int) -> OrderConditionReport:
    """Evaluate every order condition up to ``target_order``.

    Two-derivative conditions are available through order 4, IMEX coupling
    conditions through order 3. A diagonally implicit method is checked as
    a one-derivative method with Butcher matrix ``Ahat + A``.
    """
    max_order = 3 if t.kind == IMEX else 4
    if not 1 <= target_order <= max_order:
        raise ValueError(f"order conditions for kind {t.kind!r} exist for orders 1..{max_order}")
    if t.kind == IMEX:
        conds = _imex_conditions(t, target_order)
    elif t.kind == DIRK:
        conds = _implicit_conditions(t.Ahat + t.A, t.Adot, target_order)
    else:
        conds = _implicit_conditions(t.A, t.Adot, target_order)
    conds = [(label, float(res)) for p, label, res in conds if p <= target_order]
    return OrderConditionReport(target_order=target_order, residuals=conds)


def max_condition_order(kind: str) -> int:
    return 3 if kind == IMEX else 4


def obstruction_bound(t: ShuOsherTableau) -> tuple[float, float]:
    """Return ``(b'e - b'c, k_s)`` for a method with nonnegative ``P`` and ``D``.

    ``k_1 = 1/4`` and ``k_i = 1/(4(1 - k_{i-1}))``. Under the hypotheses the
    first value never exceeds the second, and ``k_s < 1/2``, so such a method
    cannot satisfy the second-order condition without a negative ``ḃ``.
    """
    if np.any(t.W != 0.0):
        raise ValueError("obstruction bound applies to methods without explicit terms (W = 0)")
    if np.any(t.P < 0.0) or np.any(t.D < 0.0) or np.any(t.Re < 0.0):
        raise ValueError("obstruction bound requires Re >= 0, P >= 0 and D >= 0")
    bt = to_butcher(t)
    b, c = bt.b, bt.c
    k = 0.25
    for _ in range(t.s - 1):
        k = 1.0 / (4.0 * (1.0 - k))
    return float(b.sum() - b @ c), k


def _dirk_shu_osher(name: str, A_rows, design_order: int) -> ShuOsherTableau:
    """Rewrite a DIRK Butcher matrix with ``r = 1`` and ``P = 0``.

    Solves ``(I - W)(A) = W + D`` for ``W`` in exact rational arithmetic, so
    the only rounding happens on the final conversion to float.
    """
    A = [[Fraction(x) for x in row] for row in A_rows]
    s = len(A)
    # W (I + A) = A - D, solved row by row (I + A is lower triangular)
    W = [[Fraction(0)] * s for _ in range(s)]
    for i in range(s):
        for j in reversed(range(i)):
            acc = A[i][j] - sum((W[i][k] * A[k][j] for k in range(j + 1, i)), Fraction(0))
            W[i][j] = acc / (1 + A[j][j])
    D = [A[i][i] for i in range(s)]
    return ShuOsherTableau(
        name=name,
        kind=DIRK,
        P=np.zeros((s, s)),
        W=np.array([[float(x) for x in row] for row in W]),
        D=np.array([float(x) for x in D]),
        Ddot=np.zeros(s),
        r=1.0,
        design_order=design_order,
    )


def _lower(s, entries):
    m = np.zeros((s, s))
    for (i, j), v in entries.items():
        m[i - 1, j - 1] = v
    return m


def _build_builtins() -> dict[str, ShuOsherTableau]:
    methods = {}
    methods["implicit-taylor-2"] = ShuOsherTableau(
        name="implicit-taylor-2", kind=IMPLICIT, P=np.zeros((1, 1)), W=None,
        D=[1.0], Ddot=[-0.5], Re=[1.0], design_order=2,
    )
    methods["ssp-imdrk-3"] = ShuOsherTableau(
        name="ssp-imdrk-3", kind=IMPLICIT, P=_lower(2, {(2, 1): 1.0}), W=None,
        D=[0.0, 1.0], Ddot=[-1 / 6, -1 / 3], Re=[1.0, 0.0], design_order=3,
    )
    methods["ssp-imdrk-4"] = ShuOsherTableau(
        name="ssp-imdrk-4",
        kind=IMPLICIT,
        P=_lower(5, {
            (2, 1): 1.0,
            (3, 1): 0.084036809261019, (3, 2): 0.915963190738981,
            (4, 1): 0.001511648458457, (4, 3): 0.090254853867587,
            (5, 4): 1.0,
        }),
        W=None,
        D=[0.660949255604937, 0.242201390400848, 1.137542996287740,
           0.191388711018110, 0.625266691721946],
        Ddot=[-0.177750705279127, -0.354733903778084, -0.403963513682271,
              -0.161628266349058, -0.218859021269943],
        Re=[1.0, 0.0, 0.0, 0.908233497673956, 0.0],
        design_order=4,
    )
    methods["ssp-imex-mdrk-2"] = ShuOsherTableau(
        name="ssp-imex-mdrk-2",
        kind=IMEX,
        P=_lower(3, {(3, 1): 0.5}),
        W=_lower(3, {(2, 1): 1.0, (3, 2): 0.5}),
        D=[0.5, 0.0, 0.5],
        Ddot=[0.0, -0.5, 0.0],
        r=1.0,
        Re=[1.0, 0.0, 0.0],
        design_order=2,
    )
    methods["ssp-imex-mdrk-3"] = ShuOsherTableau(
        name="ssp-imex-mdrk-3",
        kind=IMEX,
        P=_lower(6, {
            (2, 1): 0.253395246357353,
            (3, 2): 0.235733481708505,
            (4, 2): 0.123961833526104,
            (5, 1): 0.409037644509411, (5, 2): 0.136123556305509,
            (6, 1): 0.203353399602184, (6, 5): 0.331204417210324,
        }),
        W=_lower(6, {
            (2, 1): 0.058453072749259,
            (3, 1): 0.764266518291495,
            (4, 3): 0.292520982667463,
            (5, 1): 0.173788618990251, (5, 4): 0.281050180194829,
            (6, 1): 0.016811671845949, (6, 4): 0.448630511341543,
        }),
        D=[0.0, 2.0, 0.388820513661584, 0.083529464436389, 1.793313488277995, 0.0],
        Ddot=[-0.871358934880525, -0.856842702601821, 0.0, 0.0, -2.0, -0.205134529930013],
        r=0.904402174130635,
        Re=[1.0, 0.688151680893388, 0.0, 0.583517183806433, 0.0, 0.0],
        design_order=3,
    )
    F = Fraction
    methods["dirk-2"] = _dirk_shu_osher(
        "dirk-2", [[0, 0], [F(1, 2), F(1, 2)]], design_order=2
    )
    methods["dirk-3"] = _dirk_shu_osher(
        "dirk-3",
        [
            [0, 0, 0, 0],
            [F(3, 4), F(3, 4), 0, 0],
            [F(447, 675), F(-357, 675), F(855, 675), 0],
            [F(13, 42), F(84, 42), F(-125, 42), F(70, 42)],
        ],
        design_order=3,
    )
    return methods


_BUILTINS = _build_builtins()


def builtin_methods() -> list[tuple[str, ShuOsherTableau]]:
    return list(_BUILTINS.items())


def get_method(name: str) -> ShuOsherTableau:
    try:
        return _BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown method {name!r}; known: {', '.join(_BUILTINS)}") from None


# --- plain-text serialization -------------------------------------------------


def _fmt_vec(v) -> str:
    return "[" + ", ".join(repr(float(x)) for x in v) + "]"


def _fmt_mat(m) -> str:
    return "[" + ", ".join(_fmt_vec(row) for row in m) + "]"


def dumps(t: ShuOsherTableau) -> str:
    lines = [
        "[method]",
        f'name = "{t.name}"',
        f'kind = "{t.kind}"',
        f"r = {t.r!r}",
    ]
    if t.design_order is not None:
        lines.append(f"design_order = {t.design_order}")
    lines += [
        f"P = {_fmt_mat(t.P)}",
        f"W = {_fmt_mat(t.W)}",
        f"diag_D = {_fmt_vec(t.D)}",
        f"diag_Ddot = {_fmt_vec(t.Ddot)}",
        f"Re = {_fmt_vec(t.Re)}",
    ]
    return "\n".join(lines) + "\n"


def loads(text: str) -> ShuOsherTableau:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc)
        if "line" not in msg:
            # errors at the end of the input carry no position
            line = getattr(exc, "lineno", None) or text.count("\n") + 1
            msg = f"{msg} (line {line})"
        raise TableauError(f"parse error: {msg}") from exc
    sec = doc.get("method")
    if not isinstance(sec, dict):
        raise TableauError("missing [method] section")
    missing = [k for k in ("name", "kind", "diag_D", "diag_Ddot") if k not in sec]
    if missing:
        raise TableauError(f"[method] is missing key(s): {', '.join(missing)}")
    s = len(sec["diag_D"])
    try:
        return ShuOsherTableau(
            name=str(sec["name"]),
            kind=str(sec["kind"]),
            P=np.array(sec.get("P", np.zeros((s, s))), dtype=float),
            W=np.array(sec.get("W", np.zeros((s, s))), dtype=float),
            D=np.array(sec["diag_D"], dtype=float),
            Ddot=np.array(sec["diag_Ddot"], dtype=float),
            r=float(sec.get("r", 1.0)),
            Re=np.array(sec["Re"], dtype=float) if "Re" in sec else None,
            design_order=sec.get("design_order"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, TableauError):
            raise
        raise TableauError(f"bad coefficient data: {exc}") from exc


def load(path) -> ShuOsherTableau:
    return loads(Path(path).read_text())


def dump(t: ShuOsherTableau, path) -> None:
    Path(path).write_text(dumps(t))
