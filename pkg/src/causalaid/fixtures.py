"""Generator for the bundled synthetic Somalia-shaped data files.

The files under ``causalaid/data`` were produced by ``python -m
causalaid.fixtures <dir>`` and are committed; tests read the committed
copies and never regenerate them. Values come from the ``somalia-shaped``
benchmark SCM on a standardized latent scale, mapped to plausible units.
The data are synthetic and say nothing about real districts.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pandas as pd

from ._random import make_rng
from .scm import get_benchmark, sample

DISTRICTS = (
    "Baidoa", "Burhakaba", "Dinsor", "Qansax Dheere", "Wanla Weyn", "Afgooye", "Marka",
    "Qoryooley", "Kurtunwaarey", "Sablaale", "Baraawe", "Jowhar", "Balcad", "Mahaday",
    "Cadale", "Adan Yabaal", "Beledweyne", "Bulo Burto", "Jalalaqsi", "Dhuusamarreeb",
    "Cabudwaaq", "Cadaado", "Galkacyo", "Hobyo", "Jariiban", "Xarardheere", "Garoowe", "Eyl",
    "Burtinle", "Bossaso", "Qardho", "Iskushuban", "Caluula", "Bandarbeyla", "Laas Caanood",
    "Taleex", "Xudun", "Ceel Afweyn", "Ceerigaabo", "Laasqoray", "Burco", "Owdweyne",
    "Sheikh", "Buuhoodle", "Berbera", "Hargeysa", "Gebiley", "Borama", "Kismaayo", "Afmadow",
    "Jamaame", "Jilib", "Saakow", "Garbahaarey", "Doolow", "Luuq", "Bardheere",
)
YEARS = tuple(range(2016, 2023))
N_MISSING_ROWS = 21
ANALYSIS_COLUMNS = ("MarketPrices", "SorghumProduction", "Fatalities", "Displacement",
                    "Cash", "GAM")


def _to_units(latent: pd.DataFrame, population: np.ndarray, months: int) -> pd.DataFrame:
    """Map latent SCM draws to counts, indices and fractions.

    ``months`` scales flow variables (12 for annual rows, 1 for monthly).
    """
    scale = months / 12.0
    out = pd.DataFrame(index=latent.index)
    out["ENSO"] = latent["ENSO"].round(3)
    out["SPI"] = latent["SPI"].round(3)
    out["Fatalities"] = np.round(scale * np.exp(2.5 + 0.8 * latent["Fatalities"]))
    out["MarketPrices"] = np.round(100.0 * np.exp(0.15 * latent["MarketPrices"]), 2)
    out["SorghumProduction"] = np.round(2000.0 * np.exp(0.5 * latent["SorghumProduction"]))
    out["Displacement"] = np.round(scale * population * 0.04
                                   * np.exp(0.5 * latent["Displacement"]))
    out["Population"] = population
    out["Cash"] = np.round(population * 0.08 * np.exp(0.5 * latent["Cash"]))
    out["GAM"] = np.clip(0.14 + 0.03 * latent["GAM"], 0.01, 0.5).round(4)
    return out


def _district_population(seed):
    latent = make_rng(seed, "fixture", "population").standard_normal(len(DISTRICTS))
    return latent, np.round(150_000 * np.exp(0.5 * latent))


def country_annual(seed: int = 2016) -> pd.DataFrame:
    """57 districts x 7 years with 21 rows carrying one missing analysis cell."""
    spec = get_benchmark("somalia-shaped")
    rng = make_rng(seed, "fixture", "country")
    pop_latent, population = _district_population(seed)
    enso_by_year = rng.standard_normal(len(YEARS))

    district_idx = np.repeat(np.arange(len(DISTRICTS)), len(YEARS))
    year_idx = np.tile(np.arange(len(YEARS)), len(DISTRICTS))
    latent = sample(spec, len(district_idx), seed,
                    do={"ENSO": enso_by_year[year_idx], "Population": pop_latent[district_idx]})
    frame = _to_units(latent, population[district_idx], months=12)
    frame.insert(0, "date", [f"{YEARS[i]}-01" for i in year_idx])
    frame.insert(0, "district", [DISTRICTS[i] for i in district_idx])

    text = frame.astype(object)
    rows = rng.choice(len(frame), size=N_MISSING_ROWS, replace=False)
    for k, row in enumerate(sorted(rows)):
        col = ANALYSIS_COLUMNS[rng.integers(len(ANALYSIS_COLUMNS))]
        text.loc[row, col] = "n/a" if k % 3 == 0 else None
    return text


def baidoa_sources(seed: int = 2016) -> dict[str, pd.DataFrame]:
    """Monthly Baidoa records split across source files with native resolutions."""
    spec = get_benchmark("somalia-shaped")
    rng = make_rng(seed, "fixture", "baidoa")
    months = pd.period_range("2016-01", "2022-12", freq="M")
    n = len(months)

    enso = np.zeros(n)
    for i in range(n):
        enso[i] = (0.9 * enso[i - 1] if i else 0.0) + 0.45 * rng.standard_normal()
    # harvests recorded in January (Deyr) and July (Gu); value holds until the next one
    harvest = np.array([m.month in (1, 7) for m in months])
    season_latent = rng.standard_normal(int(harvest.sum()))
    sorghum = season_latent[np.cumsum(harvest) - 1]
    all_latent, all_population = _district_population(seed)
    pop_latent = all_latent[DISTRICTS.index("Baidoa")]
    population = float(all_population[DISTRICTS.index("Baidoa")])

    latent = sample(spec, n, seed + 1,
                    do={"ENSO": enso, "SorghumProduction": sorghum, "Population": pop_latent})
    units = _to_units(latent, np.full(n, population), months=1)
    stamp = [str(m) for m in months]

    fsnau = pd.DataFrame({"district": "Baidoa", "date": stamp,
                          "MarketPrices": units["MarketPrices"], "Cash": units["Cash"],
                          "GAM": units["GAM"]})
    sorghum_rows = pd.DataFrame({"district": "Baidoa",
                                 "date": [s for s, h in zip(stamp, harvest) if h],
                                 "SorghumProduction": units["SorghumProduction"][harvest]})
    spi = pd.DataFrame({"district": "Baidoa", "date": stamp, "SPI": units["SPI"]})
    enso_rows = pd.DataFrame({"date": stamp, "ENSO": units["ENSO"]})

    events, weekly = [], []
    for m, fat, disp in zip(months, units["Fatalities"], units["Displacement"]):
        n_events = int(rng.integers(1, 5))
        split = rng.multinomial(int(fat), np.full(n_events, 1.0 / n_events))
        days = np.sort(rng.integers(1, 29, size=n_events))
        events += [("Baidoa", f"{m}-{d:02d}", int(f)) for d, f in zip(days, split)]
        parts = rng.multinomial(int(disp), np.full(4, 0.25))
        weekly += [("Baidoa", f"{m}-{d:02d}", int(v)) for d, v in zip((1, 8, 15, 22), parts)]
    acled = pd.DataFrame(events, columns=["district", "date", "Fatalities"])
    prmn = pd.DataFrame(weekly, columns=["district", "date", "Displacement"])
    population_rows = pd.DataFrame({"district": DISTRICTS,
                                    "Population": all_population.astype(int)})
    return {
        "baidoa_fsnau_monthly.csv": fsnau,
        "baidoa_fsnau_sorghum.csv": sorghum_rows,
        "baidoa_acled_events.csv": acled,
        "baidoa_prmn_displacement.csv": prmn,
        "baidoa_chirps_spi.csv": spi,
        "wmo_enso.csv": enso_rows,
        "unfpa_population.csv": population_rows,
    }


def write_all(out_dir, seed: int = 2016) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {"somalia_districts_annual.csv": country_annual(seed), **baidoa_sources(seed)}
    written = []
    for name, frame in files.items():
        path = out_dir / name
        frame.to_csv(path, index=False, lineterminator="\n")
        written.append(path)
    return written


if __name__ == "__main__":
    for p in write_all(sys.argv[1] if len(sys.argv) > 1 else "."):
        print(p)
