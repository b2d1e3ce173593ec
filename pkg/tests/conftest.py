import numpy as np
import pytest

from cfisac.channel import draw_channels, draw_symbols, link_view
from cfisac.config import SimConfig
from cfisac.performance import PrecodingSettings, make_bank
from cfisac.precoding import assemble_dl_signal
from cfisac.scenario import build_scenario


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def small_config(**overrides) -> SimConfig:
    base = dict(num_aps=5, antennas_per_ap=3, num_users=6, obs_window=6, rng_seed=3)
    base.update(overrides)
    return SimConfig(**base)


def random_link(rng, *, config=None, ul_aps=(0, 1), dl_aps=(2, 3, 4), with_ul_users=True):
    """Scenario, channels and a link view on a fixed AP split."""
    config = config or small_config()
    scenario = build_scenario(config, rng)
    channels = draw_channels(scenario, rng)
    link = link_view(scenario, channels, np.array(ul_aps), np.array(dl_aps),
                     with_ul_users=with_ul_users)
    return scenario, channels, link


def dl_signal(link, rng, T, constellation="gaussian", settings=PrecodingSettings()):
    M_u, M_d, N, K_u, K_d = link.shape
    bank = make_bank(link, settings)
    symbols = draw_symbols(K_u, K_d, T, constellation, rng)
    return bank, symbols, assemble_dl_signal(bank, symbols, link.dl_power, N)


def random_hpd(rng, n, floor=0.1):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A @ A.conj().T + floor * np.eye(n)


ACCEPTANCE_LINES: dict[int, str] = {}


def report_criterion(number: int, ok: bool, detail: str) -> None:
    """Record one acceptance verdict for the end-of-run summary."""
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
