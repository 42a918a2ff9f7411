"""Shared builders for synthetic mortality panels."""

import numpy as np
import pytest

from lingermort.model import ParamSet
from lingermort.panel import AgeAxis, CauseAxis, MortalityPanel

AGE_LABELS_4 = ("35-44", "45-54", "55-64", "65-74")
CAUSE_LABELS_3 = ("A", "B", "C")


def random_params(rng, X, C, T=None, p=None):
    """A ParamSet with bounded random coordinates (valid for any T)."""
    return ParamSet(
        B=rng.uniform(0.05, 0.5, X),
        D=rng.uniform(-0.05, 0.05),
        sigma_eta=rng.uniform(0.02, 0.2),
        phi=rng.uniform(0.3, 1.5, C),
        b=rng.uniform(-0.4, 0.4, X),
        d=rng.uniform(-0.05, 0.05),
        sigma_xi=rng.uniform(0.02, 0.2),
        mu=rng.uniform(-0.3, 0.3, (X, C)),
        sigma_J=rng.uniform(0.01, 0.1),
        gamma=rng.uniform(0.0, 0.8, C),
        alpha=rng.uniform(0.8, 3.0, C),
        beta=rng.uniform(0.3, 2.0, C),
        p=p if p is not None else rng.uniform(0.02, 0.3),
        sigma_e=rng.uniform(0.02, 0.1),
    )


def make_panel(rng, X=4, T=20, C=3, jump_year=None, jump_scale=0.3,
               jump_kind="permanent", exposure=8e5, first_year=2001):
    """Poisson panel around smooth declining rates, optional level jump.

    jump_kind "permanent" keeps rates elevated from the jump year onward;
    "transitory" elevates only the jump year itself."""
    labels = [f"{35 + 10 * i}-{44 + 10 * i}" for i in range(X)]
    ages = AgeAxis.from_labels(labels)
    causes = CauseAxis(tuple(chr(ord("A") + c) for c in range(C)))
    years = np.arange(first_year, first_year + T)
    base = np.exp(-6.0 + 0.6 * np.arange(X))[:, None, None]
    trend = np.exp(-0.012 * np.arange(T))[None, :, None]
    shares = np.linspace(0.5, 0.2, C)
    shares /= shares.sum()
    rates = base * trend * shares[None, None, :]
    if jump_year is not None:
        t = int(np.where(years == jump_year)[0][0])
        if jump_kind == "transitory":
            rates[:, t, :] *= np.exp(jump_scale)
        else:
            rates[:, t:, :] *= np.exp(jump_scale)
    expo = np.full((X, T), float(exposure))
    deaths = rng.poisson(rates * expo[:, :, None]).astype(float) + 1.0
    return MortalityPanel(ages, causes, years, deaths, expo)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
