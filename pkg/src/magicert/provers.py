"""Prover strategies that sit on the device side of the protocol.

The honest prover runs the full quantum pipeline in collapsed form: commit
through the oracle, open in the requested basis, assemble the three leftover
qubits, entangle them, and measure as asked. The other strategies are
controlled distortions of that pipeline: answer-bit noise, qubit
depolarization, a Clifford-limited device, and a canned script.

A prover only ever sees key handles and the public oracle operations. It is
never told which family a key belongs to, the basis triple, or any trapdoor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import entcf, qsim
from .errors import ParameterError, ProtocolOrderError, ScriptError
from .util import int_to_tuple, sample_index

NOISE_MODELS = ("bitflip", "depolarizing")


class HonestProver:
    """Faithful device: samples commitments, opens, applies CCZ, measures."""

    def __init__(self, registry: entcf.OracleRegistry, rng: np.random.Generator):
        self.registry = registry
        self.rng = rng
        self.commitments: list[entcf.Commitment] | None = None
        self.qubits: list[entcf.CollapsedQubit] | None = None
        self.state: qsim.StateVector | None = None
        self._stage = "idle"

    # ------------------------------------------------------------ protocol

    def commit(self, handles: list[entcf.KeyHandle]) -> list[int]:
        self._require("idle")
        ys, self.commitments = [], []
        for handle in handles:
            y, c = self.registry.sample_commitment(handle, self.rng)
            ys.append(y)
            self.commitments.append(c)
        self._stage = "committed"
        return ys

    def answer_preimage(self) -> list[tuple[int, int]]:
        """Open classically. A claw coordinate reveals a fair-coin branch."""
        self._require("committed")
        answers = []
        for c in self.commitments:
            held = c.held
            if isinstance(held, entcf.DefinitePreimage):
                answers.append((held.b, held.x))
            else:
                b = int(self.rng.integers(0, 2))
                answers.append((b, held.x1 if b else held.x0))
        self._stage = "finished"
        return answers

    def answer_hadamard(self) -> list[int]:
        """Open in the conjugate basis and build the post-gate register."""
        self._require("committed")
        ds, qubits = [], []
        for c in self.commitments:
            d, qubit = entcf.hadamard_open(c, self.rng)
            ds.append(d)
            qubits.append(qubit)
        self.qubits = qubits
        amps = qubits[0].amplitudes()
        for qubit in qubits[1:]:
            amps = np.kron(amps, qubit.amplitudes())
        self.state = self._entangle(qsim.StateVector(amps), qubits)
        self._stage = "opened"
        return ds

    def answer_questions(self, q) -> list[int]:
        self._require("opened")
        vs = qsim.measure_pauli(self.state, tuple(q), self.rng)
        self._stage = "finished"
        return list(vs)

    # -------------------------------------------------------------- hooks

    def _entangle(self, state: qsim.StateVector, qubits) -> qsim.StateVector:
        """The three-qubit phase gate; subclasses may restrict it."""
        return qsim.apply_gate(state, "CCZ")

    def _require(self, stage: str) -> None:
        if self._stage != stage:
            raise ProtocolOrderError(f"prover at stage {self._stage!r}, call needs {stage!r}")


class StabilizerProver(HonestProver):
    """Clifford-limited device: skips the phase gate exactly when it needs magic.

    On a register with at least one computational-basis qubit the gate acts
    as a (classically controlled) CZ or Z, which a stabilizer device can
    perform, so it does. On an all-conjugate register the gate would create
    a non-stabilizer state, so this device leaves the product state alone.
    """

    def _entangle(self, state: qsim.StateVector, qubits) -> qsim.StateVector:
        if all(qubit.basis == "X" for qubit in qubits):
            return state
        return qsim.apply_gate(state, "CCZ")


@dataclass(frozen=True)
class NoiseSpec:
    """Answer-noise selection: model name plus per-qubit probability."""

    model: str
    epsilon: float

    def __post_init__(self) -> None:
        if self.model not in NOISE_MODELS:
            raise ParameterError(f"unknown noise model {self.model!r}")
        if not isinstance(self.epsilon, (int, float)) or not 0.0 <= float(self.epsilon) <= 1.0:
            raise ParameterError(f"noise probability {self.epsilon!r} outside [0, 1]")


class NoisyProver:
    """Wraps an honest-style prover and corrupts its measurement answers.

    bitflip: each returned answer bit flips independently with probability
    epsilon. depolarizing: each register qubit is replaced by the maximally
    mixed state with probability epsilon before measurement, which moves the
    final measurement onto the density-state path. epsilon = 0 delegates
    everything, so transcripts match the inner prover bit for bit.
    """

    def __init__(self, inner: HonestProver, spec: NoiseSpec):
        self.inner = inner
        self.spec = spec
        self.rho: qsim.DensityState | None = None

    def commit(self, handles) -> list[int]:
        self.rho = None
        return self.inner.commit(handles)

    def answer_preimage(self) -> list[tuple[int, int]]:
        return self.inner.answer_preimage()

    def answer_hadamard(self) -> list[int]:
        ds = self.inner.answer_hadamard()
        if self.spec.model == "depolarizing" and self.spec.epsilon > 0:
            rho = qsim.DensityState.from_statevector(self.inner.state)
            for qubit in range(rho.n):
                rho = qsim.depolarize(rho, qubit, self.spec.epsilon)
            self.rho = rho
        return ds

    def answer_questions(self, q) -> list[int]:
        if self.rho is not None:
            dist = qsim.outcome_distribution_density(self.rho, tuple(q))
            outcome = sample_index(dist, self.inner.rng)
            return list(int_to_tuple(outcome, self.rho.n))
        vs = self.inner.answer_questions(q)
        if self.spec.model == "bitflip" and self.spec.epsilon > 0:
            draws = self.inner.rng.random(len(vs))
            vs = [v ^ int(u < self.spec.epsilon) for v, u in zip(vs, draws)]
        return list(vs)


def noisy(inner: HonestProver, spec: NoiseSpec) -> NoisyProver:
    return NoisyProver(inner, spec)


def stabilizer_prover(registry: entcf.OracleRegistry, rng: np.random.Generator) -> StabilizerProver:
    return StabilizerProver(registry, rng)


class ScriptedProver:
    """Replays canned answers; no randomness, no oracle access."""

    def __init__(self, record: dict):
        if not isinstance(record, dict) or not record:
            raise ScriptError("script record must be a non-empty mapping")
        self.record = dict(record)

    def _field(self, name: str, convert):
        if name not in self.record:
            raise ScriptError(f"script record lacks field {name!r}")
        try:
            return convert(self.record[name])
        except (TypeError, ValueError) as exc:
            raise ScriptError(f"script field {name!r} is malformed: {exc}") from exc

    def commit(self, handles) -> list[int]:
        return self._field("ys", lambda v: [int(y) for y in v])

    def answer_preimage(self) -> list[tuple[int, int]]:
        return self._field("preimages", lambda v: [(int(b), int(x)) for b, x in v])

    def answer_hadamard(self) -> list[int]:
        return self._field("ds", lambda v: [int(d) for d in v])

    def answer_questions(self, q) -> list[int]:
        return self._field("vs", lambda v: [int(b) for b in v])


def script_record(data, index: int) -> dict:
    """Pick the record for one session: a bare mapping serves every session,
    a list is addressed by session index and can run out."""
    if isinstance(data, dict):
        if not data:
            raise ScriptError("script is empty")
        return data
    if isinstance(data, list):
        if index >= len(data):
            raise ScriptError(f"script exhausted at session {index} (holds {len(data)})")
        return data[index]
    raise ScriptError("script must be a mapping or a list of mappings")


_NOISE_ALIASES = {"bitflip": "bitflip", "depol": "depolarizing", "depolarizing": "depolarizing"}


def parse_prover_spec(spec: str):
    """Turn a selection string into a per-session factory.

    Accepted forms: honest | stabilizer | noisy:bitflip:<p> | noisy:depol:<p>
    | scripted:<path>. The factory signature is (registry, rng, index).
    """
    if spec == "honest":
        return lambda registry, rng, index: HonestProver(registry, rng)
    if spec == "stabilizer":
        return lambda registry, rng, index: StabilizerProver(registry, rng)
    if spec.startswith("noisy:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ParameterError(f"noisy spec {spec!r} wants noisy:<model>:<epsilon>")
        model = _NOISE_ALIASES.get(parts[1])
        if model is None:
            raise ParameterError(f"unknown noise model {parts[1]!r}")
        try:
            epsilon = float(parts[2])
        except ValueError as exc:
            raise ParameterError(f"bad noise probability {parts[2]!r}") from exc
        ns = NoiseSpec(model=model, epsilon=epsilon)
        return lambda registry, rng, index: NoisyProver(HonestProver(registry, rng), ns)
    if spec.startswith("scripted:"):
        path = spec[len("scripted:"):]
        if not path:
            raise ParameterError("scripted spec wants scripted:<path>")
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ParameterError(f"cannot load script {path!r}: {exc}") from exc
        return lambda registry, rng, index: ScriptedProver(script_record(data, index))
    raise ParameterError(f"unknown prover spec {spec!r}")
