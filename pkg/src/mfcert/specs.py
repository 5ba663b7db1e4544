"""Building models, limit problems and control problems from JSON."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import graphs
from .control import ControlProblem
from .errors import InvalidModel, MfcertError
from .models import (
    BLACKBOXES,
    KERNELS,
    POTENTIALS,
    BayesLinReg,
    InteractionKernel,
    Model,
    PairwiseGibbs,
    QuadraticModel,
    ScalarPotential,
)

MODEL_TYPES = ("pairwise", "quadratic", "bayes", "blackbox-builtin")


class SpecIOError(MfcertError):
    code = "E_IO_MODEL"


def read_json(path, what="model"):
    p = Path(path)
    if not p.is_file():
        err = SpecIOError(f"{what} file not found: {p}")
        err.code = f"E_IO_{what.upper()}"
        raise err
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        err = SpecIOError(f"{what} file {p} is not valid JSON: {exc}")
        err.code = f"E_PARSE_{what.upper()}"
        raise err from None


def potential(spec, check_growth=True) -> ScalarPotential:
    spec = dict(spec)
    name = spec.pop("name", None)
    if name not in POTENTIALS:
        raise InvalidModel(f"unknown potential {name!r}; choose from {sorted(POTENTIALS)}")
    growth = spec.pop("growth", None)
    if growth is not None:
        growth = tuple(float(v) for v in growth)
    try:
        return POTENTIALS[name](**spec, growth=growth, check_growth=check_growth)
    except TypeError as exc:
        raise InvalidModel(f"bad parameters for potential {name}: {exc}") from None


def kernel(spec) -> InteractionKernel:
    spec = dict(spec)
    name = spec.pop("name", None)
    if name not in KERNELS:
        raise InvalidModel(f"unknown kernel {name!r}; choose from {sorted(KERNELS)}")
    try:
        return KERNELS[name](**spec)
    except TypeError as exc:
        raise InvalidModel(f"bad parameters for kernel {name}: {exc}") from None


def build_model(spec: dict) -> Model:
    """Model from a parsed JSON object, discriminated by ``type``."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise InvalidModel("model spec must be an object with a 'type' field")
    kind = spec["type"]
    # the growth gate may be an artifact of the theory; allow an explicit override
    check_growth = not bool(spec.get("growth_override", False))
    if kind == "pairwise":
        V = potential(spec["V"], check_growth)
        K = kernel(spec.get("K", {"name": "zero_kernel"}))
        return PairwiseGibbs(V, K, graphs.from_spec(spec["J"]))
    if kind == "quadratic":
        return QuadraticModel(spec["A"], spec.get("b"), spec.get("c", 0.0))
    if kind == "bayes":
        prior = potential(spec["prior"], check_growth)
        return BayesLinReg(spec["X"], spec["y"], spec["sigma2"], prior)
    if kind == "blackbox-builtin":
        params = dict(spec)
        params.pop("type")
        params.pop("growth_override", None)
        name = params.pop("name", None)
        if name not in BLACKBOXES:
            raise InvalidModel(f"unknown black-box {name!r}; choose from {sorted(BLACKBOXES)}")
        try:
            return BLACKBOXES[name](**params)
        except TypeError as exc:
            raise InvalidModel(f"bad parameters for black-box {name}: {exc}") from None
    raise InvalidModel(f"unknown model type {kind!r}; choose from {MODEL_TYPES}")


def load_model(path) -> Model:
    return build_model(read_json(path, "model"))


def build_control(spec: dict) -> tuple[ControlProblem, dict | None]:
    try:
        n, T, g = int(spec["n"]), float(spec["T"]), build_model(spec["g"])
    except KeyError as exc:
        raise InvalidModel(f"control spec misses field {exc}") from None
    prob = ControlProblem(n, T, g, growth=spec.get("growth"), check_growth=not spec.get("growth_override", False))
    return prob, spec.get("sde")


def build_limit(spec: dict):
    """(V, K, weights or None) from a limit spec; weights None means the scalar problem."""
    V = potential(spec["V"], not spec.get("growth_override", False))
    K = kernel(spec["K"])
    if spec.get("scalar", False) or "weights" not in spec:
        return V, K, None
    return V, K, np.asarray(spec["weights"], dtype=float)


def model_hash_input(path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
