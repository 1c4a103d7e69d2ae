"""Speed inference from relative centerline populations, and the speed
tables comparing it with the De Broglie, ansatz and symmetric speeds.

The inferred speed follows the population-spreading argument: the auxiliary
guide fills as rho_a(x) ~ C x^2 just inside the step, and the coupling J0
converts the spreading rate into a speed v = J0 / sqrt(C).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import EvaluationError, evanescent_speed_at_step
from .grid import HBAR

FIT_RANGE = (0.0, 10.5)  # um
Y_MAIN, Y_AUX = 8.0, -8.0

SPEED_COLUMNS = ["source_type", "n", "pulse_index", "n_x", "n_y", "E_x_meV", "v_DB",
                 "v_ansatz", "v_s", "C", "v_fit", "fit_rms", "flags"]


class FitError(ValueError):
    pass


def relative_population(main: np.ndarray, aux: np.ndarray, floor_epsilon: float = 1e-12,
                        negative_tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """rho_a = aux / (main + aux) and a validity mask.

    Samples whose total falls below ``floor_epsilon`` of the peak total are
    invalid.  Slightly negative inputs (roundoff, within ``negative_tol`` of the
    peak) are treated as zero; anything more negative is an error.
    """
    main = np.asarray(main, float)
    aux = np.asarray(aux, float)
    if main.shape != aux.shape:
        raise ValueError("profiles must share the same x samples")
    peak = max(np.max(np.abs(main)), np.max(np.abs(aux)), 0.0)
    if np.any(main < -negative_tol * peak) or np.any(aux < -negative_tol * peak):
        raise ValueError("densities must be non-negative")
    main = np.clip(main, 0, None)
    aux = np.clip(aux, 0, None)
    total = main + aux
    valid = total >= floor_epsilon * total.max() if total.max() > 0 else np.zeros(total.shape, bool)
    rho = np.divide(aux, total, out=np.zeros_like(total), where=valid)
    return rho, valid


@dataclass(frozen=True)
class ParabolicFit:
    C: float  # um^-2
    rms: float
    n_samples: int

    @property
    def ok(self) -> bool:
        return self.C > 0


def parabolic_fit(x: np.ndarray, rho_a: np.ndarray, valid: np.ndarray | None = None,
                  x_range: tuple[float, float] = FIT_RANGE, min_samples: int = 5) -> ParabolicFit:
    """Least-squares C for rho_a ~ C x^2 on lo < x <= hi (no constant or linear term)."""
    x = np.asarray(x, float)
    rho_a = np.asarray(rho_a, float)
    sel = (x > x_range[0]) & (x <= x_range[1] + 1e-9)
    if valid is not None:
        sel &= np.asarray(valid, bool)
    n = int(sel.sum())
    if n < min_samples:
        raise FitError(f"only {n} valid samples in {x_range}, need {min_samples}")
    xs, ys = x[sel], rho_a[sel]
    x2 = xs**2
    C = float(np.dot(ys, x2) / np.dot(x2, x2))
    rms = float(np.sqrt(np.mean((ys - C * x2) ** 2)))
    return ParabolicFit(C, rms, n)


def fitted_speed(C: float, J0: float) -> float:
    """v = J0 / sqrt(C); NaN when C <= 0 (no speed can be inferred)."""
    if not C > 0:
        return math.nan
    return J0 / math.sqrt(C)


def de_broglie_speed(E_x: float, V0: float, mass: float) -> float:
    """Evanescent De Broglie speed sqrt(2 (V0 - E_x) / m)."""
    if E_x > V0:
        raise ValueError(f"E_x={E_x} is above the barrier V0={V0}; the state is not evanescent")
    return math.sqrt(2 * (V0 - E_x) / mass)


def ansatz_speed(E_x: float, V0: float, J0: float, mass: float) -> tuple[float, float]:
    """(v, Delta) with Delta = E_x - V0 + hbar J0 and v = sqrt(2 |Delta| / m)."""
    delta = E_x - V0 + HBAR * J0
    return math.sqrt(2 * abs(delta) / mass), delta


@dataclass
class SpeedRecord:
    source_type: str  # "eigenstate" or "pulse"
    index: int
    E_x: float
    v_DB: float
    v_ansatz: float
    delta: float
    C: float = math.nan
    v_fit: float = math.nan
    fit_rms: float = math.nan
    v_s: float | None = None
    n_x: int | None = None
    n_y: int | None = None
    flags: list[str] = field(default_factory=list)

    def row(self) -> dict:
        return {
            "source_type": self.source_type,
            "n": self.index if self.source_type == "eigenstate" else None,
            "pulse_index": self.index if self.source_type == "pulse" else None,
            "n_x": self.n_x, "n_y": self.n_y, "E_x_meV": self.E_x, "v_DB": self.v_DB,
            "v_ansatz": self.v_ansatz, "v_s": self.v_s, "C": self.C, "v_fit": self.v_fit,
            "fit_rms": self.fit_rms, "flags": ";".join(self.flags),
        }


def _fit_into(rec: SpeedRecord, x, main, aux, J0, x_range):
    rho, valid = relative_population(main, aux)
    try:
        fit = parabolic_fit(x, rho, valid, x_range)
    except FitError as exc:
        rec.flags.append("fit_error")
        return str(exc)
    rec.C, rec.fit_rms = fit.C, fit.rms
    rec.v_fit = fitted_speed(fit.C, J0)
    if not fit.ok:
        rec.flags.append("fit_failed")
    return None


def _ordered_map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def eigenstate_speed_table(spectrum, n_y: int = 0, x_eval: float = 3.0, y_eval: float = Y_MAIN,
                           x_range=FIT_RANGE, workers: int = 1) -> list[SpeedRecord]:
    """One record per eigenstate of the ``n_y`` series, ordered by energy."""
    V0, J0, m = spectrum.V0, spectrum.J0, spectrum.mass
    x = spectrum.grid.x
    main_all = spectrum.centerlines(Y_MAIN) ** 2
    aux_all = spectrum.centerlines(Y_AUX) ** 2

    def one(n):
        lb = spectrum.labels[n]
        E_x = float(spectrum.energies[n] - spectrum.E_well_y0)
        v_a, delta = ansatz_speed(E_x, V0, J0, m)
        rec = SpeedRecord("eigenstate", n, E_x, de_broglie_speed(E_x, V0, m), v_a, delta,
                          n_x=lb.n_x, n_y=lb.n_y)
        if not lb.separable:
            rec.flags.append("non_separable")
        try:
            rec.v_s = evanescent_speed_at_step(n, spectrum, x_eval, y_eval)
        except EvaluationError:
            rec.flags.append("v_s_at_node")
        _fit_into(rec, x, main_all[n], aux_all[n], J0, x_range)
        return rec

    return _ordered_map(one, spectrum.series(n_y), workers)


def pulse_speed_table(pulses, spectrum, windows, x_range=FIT_RANGE, workers: int = 1,
                      fidelity_flag: float = 0.9) -> list[SpeedRecord]:
    """One record per pulse, from the time-averaged centerline densities.

    ``pulses`` may contain exceptions for pulses that could not be built;
    they produce a flagged record without speeds.  ``windows`` gives the
    averaging time T for each pulse.
    """
    from .dynamics import time_averaged_density

    V0, J0, m = spectrum.V0, spectrum.J0, spectrum.mass
    x = spectrum.grid.x

    def one(item):
        j, (st, T) = item
        if isinstance(st, Exception):
            return SpeedRecord("pulse", j, math.nan, math.nan, math.nan, math.nan,
                               flags=["projection_failed"])
        E_x = st.mean_Ex
        v_a, delta = ansatz_speed(E_x, V0, J0, m)
        v_db = de_broglie_speed(E_x, V0, m) if E_x <= V0 else math.nan
        rec = SpeedRecord("pulse", j, E_x, v_db, v_a, delta)
        if st.fidelity < fidelity_flag:
            rec.flags.append("low_fidelity")
        if st.warnings:
            rec.flags.append("clipped")
        main, aux = time_averaged_density(st, T, spectrum, restrict=(Y_MAIN, Y_AUX))
        _fit_into(rec, x, main, aux, J0, x_range)
        return rec

    return _ordered_map(one, list(enumerate(zip(pulses, windows))), workers)
