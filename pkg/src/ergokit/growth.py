"""Growth functions F: N -> N with F(M) >= M, kept as data so reports stay serializable."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .errors import PreconditionError

_AFFINE = re.compile(r"^(?:(\d+)\*?)?M(?:\*(\d+))?(?:([+-])(\d+))?$")
_POWER = re.compile(r"^M(?:\^|\*\*)(\d+(?:\.\d+)?)$")


@dataclass(frozen=True)
class GrowthFunction:
    """One of ``affine`` (a*M + b), ``power`` (M^c rounded) or ``table``.

    A table lists values at chosen M; elsewhere F(M) is the larger of M and
    the last listed value at or below M, which keeps F monotone.
    """

    kind: str
    a: int = 1
    b: int = 0
    c: float = 1.0
    table: tuple = ()

    def __post_init__(self):
        if self.kind == "affine":
            if self.a < 1 or self.b < 0:
                raise PreconditionError("affine growth needs a >= 1 and b >= 0")
        elif self.kind == "power":
            if self.c < 1:
                raise PreconditionError("power growth needs an exponent c >= 1")
        elif self.kind == "table":
            for m, v in self.table:
                if v < m:
                    raise PreconditionError(f"table entry F({m}) = {v} is below {m}")
            ms = sorted(self.table)
            for (m1, v1), (m2, v2) in zip(ms, ms[1:]):
                if v2 < v1:
                    raise PreconditionError("table growth must be non-decreasing")
        else:
            raise PreconditionError(f"unknown growth kind {self.kind!r}")

    @classmethod
    def affine(cls, a: int, b: int = 0) -> "GrowthFunction":
        return cls("affine", a=int(a), b=int(b))

    @classmethod
    def power(cls, c: float) -> "GrowthFunction":
        return cls("power", c=float(c))

    @classmethod
    def from_table(cls, mapping: dict) -> "GrowthFunction":
        return cls("table", table=tuple(sorted((int(k), int(v)) for k, v in mapping.items())))

    @classmethod
    def parse(cls, text: str) -> "GrowthFunction":
        """Parse forms like ``M^2``, ``M**2``, ``8*M``, ``M*8``, ``2*M+3`` or ``table:1=4,2=9``."""
        s = text.replace(" ", "")
        if s.startswith("table:"):
            entries = {}
            for item in filter(None, s[len("table:"):].split(",")):
                k, _, v = item.partition("=")
                if not k.isdigit() or not v.isdigit():
                    raise PreconditionError(f"bad table entry {item!r}")
                entries[int(k)] = int(v)
            return cls.from_table(entries)
        m = _POWER.match(s)
        if m:
            return cls.power(float(m.group(1)))
        m = _AFFINE.match(s)
        if m and not (m.group(1) and m.group(2)):
            a = int(m.group(1) or m.group(2) or 1)
            b = int(m.group(4) or 0) * (-1 if m.group(3) == "-" else 1)
            return cls.affine(a, b)
        raise PreconditionError(f"cannot parse growth function {text!r}")

    def __call__(self, M: int) -> int:
        M = int(M)
        if M < 1:
            raise PreconditionError("growth functions act on positive integers")
        if self.kind == "affine":
            return self.a * M + self.b
        if self.kind == "power":
            if float(self.c).is_integer():
                return M ** int(self.c)
            return max(M, int(math.floor(M**self.c + 0.5)))
        below = [v for m, v in self.table if m <= M]
        return max([M] + below)

    def __str__(self) -> str:
        if self.kind == "affine":
            core = f"{self.a}*M" if self.a != 1 else "M"
            return core + (f"+{self.b}" if self.b else "")
        if self.kind == "power":
            c = int(self.c) if float(self.c).is_integer() else self.c
            return f"M^{c}"
        return "table:" + ",".join(f"{m}={v}" for m, v in self.table)
