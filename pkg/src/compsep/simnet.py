"""Simulated star network and its communication ledger.

The server holds ``f1`` and ``g1`` and evaluates them for free.  Anything
involving the other nodes goes through :meth:`Network.round_grad`, which
charges one synchronous round to the group(s) it touches.  A round over a
group with ``m`` nodes costs ``m - 1`` client-server messages (the server
does not message itself).
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import ProtocolError
from .numerics import as_vector
from .problems import grad_group

BYTES_PER_ENTRY = 8


class Group(str, Enum):
    F = "F"
    G = "G"
    ALL = "ALL"


_ALLOWED = {
    Group.F: ("f", "f_minus_f1"),
    Group.G: ("g", "g_minus_g1"),
    Group.ALL: ("h", "h_minus_h1"),
}


class LedgerSnapshot(NamedTuple):
    rounds_f: int
    rounds_g: int
    comms_f: int
    comms_g: int

    @property
    def total_rounds(self):
        return self.rounds_f + self.rounds_g


@dataclass
class CommLedger:
    """Monotone round and message counters with an event history."""

    rounds_f: int = 0
    rounds_g: int = 0
    comms_f: int = 0
    comms_g: int = 0
    history: list = field(default_factory=list)

    def charge(self, group, m_f, m_g):
        if group in (Group.F, Group.ALL):
            self.rounds_f += 1
            self.comms_f += m_f - 1
        if group in (Group.G, Group.ALL):
            self.rounds_g += 1
            self.comms_g += m_g - 1
        self.history.append((group.value, len(self.history)))

    def snapshot(self):
        return LedgerSnapshot(self.rounds_f, self.rounds_g, self.comms_f, self.comms_g)

    @property
    def total_rounds(self):
        return self.rounds_f + self.rounds_g

    def bytes_sent(self, d):
        return d * BYTES_PER_ENTRY * (self.comms_f + self.comms_g)


def snapshot(ledger):
    return ledger.snapshot()


class Network:
    """Server view of a composite problem: free local oracles, charged rounds.

    ``observe`` is instrumentation for traces and stopping tests; it reads
    the problem directly and is never charged.
    """

    def __init__(self, problem, ledger=None, x_star=None):
        self._problem = problem
        self.ledger = CommLedger() if ledger is None else ledger
        self.d = problem.d
        self.m_f = problem.m_f
        self.m_g = problem.m_g
        self.server_f = problem.server_f
        self.server_g = problem.server_g
        self._x_star = x_star
        self._h_star = None if x_star is None else problem.value("h", x_star)

    def round_grad(self, group, which, x):
        """One communication round; returns the requested exact group gradient.

        ``F`` accepts ``f`` / ``f_minus_f1``, ``G`` accepts ``g`` /
        ``g_minus_g1``.  ``ALL`` accepts ``h`` or ``h_minus_h1`` and returns
        the pair ``(f-part, g-part)``.
        """
        group = Group(group)
        if which not in _ALLOWED[group]:
            raise ProtocolError(f"{group.value}-round cannot deliver {which!r}")
        x = as_vector(x, self.d)
        p = self._problem
        if group is Group.ALL:
            if which == "h":
                out = (grad_group(p, "f", x), grad_group(p, "g", x))
            else:
                out = (grad_group(p, "f_minus_f1", x), grad_group(p, "g_minus_g1", x))
        else:
            out = grad_group(p, which, x)
        self.ledger.charge(group, self.m_f, self.m_g)
        return out

    # server-local, free
    def grad_f1(self, x):
        return self.server_f.grad(x)

    def grad_g1(self, x):
        return self.server_g.grad(x)

    def grad_h1(self, x):
        return self.server_f.grad(x) + self.server_g.grad(x)

    def snapshot(self):
        return self.ledger.snapshot()

    # instrumentation, free
    def observe(self, x):
        """``(||grad h(x)||, h(x) - h(x*) or nan, h(x))`` without charging the ledger."""
        p = self._problem
        hx = p.value("h", x)
        gn = float(np.linalg.norm(grad_group(p, "h", x)))
        sub = float("nan") if self._h_star is None else hx - self._h_star
        return gn, sub, hx
