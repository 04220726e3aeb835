import contextlib
import dataclasses

import numpy as np
import pytest
import torch

from occflow.harness.config import micro_config
from occflow.harness.data import encode_scenes, generate_scenes
from occflow.raster_gt import GridSpec
from occflow.scene_kit import AgentTrack, MapPolyline, Scene, SceneRecipe

torch.set_num_threads(1)

T_HIST, T_FUTURE = 11, 80
TOTAL = T_HIST + T_FUTURE
CUR = T_HIST - 1


def make_agent(aid, x0=0.0, y0=0.0, heading=np.pi / 2, vx=0.0, vy=0.0, length=4.0, width=2.0,
               observed=True, dt=0.1):
    """Constant-velocity track passing (x0, y0) at the current step."""
    t = (np.arange(TOTAL) - CUR) * dt
    pos = np.stack([x0 + vx * t, y0 + vy * t], axis=1)
    validity = np.ones(TOTAL, dtype=bool)
    if not observed:
        validity[: CUR + 1] = False
    return AgentTrack(aid, pos, np.full(TOTAL, heading), validity, length, width, observed)


def make_scene(agents, polylines=()):
    return Scene(agents=list(agents), polylines=list(polylines), sdc_index=0, scene_id="hand")


def far_sdc():
    """An SDC parked well outside the default field of view; keeps grids clean."""
    return make_agent(0, x0=500.0, y0=500.0)


@pytest.fixture
def spec():
    return GridSpec()


@pytest.fixture(scope="session")
def micro_cfg():
    return micro_config()


@pytest.fixture(scope="session")
def micro_items(micro_cfg):
    scenes = generate_scenes(SceneRecipe(num_agents=8, num_occluded=2), 4)
    return encode_scenes(scenes, micro_cfg)


@pytest.fixture(scope="session")
def tiny_train_cfg(micro_cfg):
    return dataclasses.replace(
        micro_cfg,
        train=dataclasses.replace(micro_cfg.train, batch_size=2, epochs=2, eval_every_epochs=1),
    )


def fd_param_check(loss_fn, params, picks_per_param=1, eps=1e-6, seed=0, floor=1e-5):
    """Central-difference check of d loss / d w on a few entries of each parameter.

    Returns a list of (name, index, analytic, numeric, rel_err). Gradients
    below ``floor`` (structurally zero ones, e.g. attention key biases) are
    measured against the floor, which sits well above the differencing noise.
    """
    gen = torch.Generator().manual_seed(seed)
    for _, p in params:
        p.grad = None
    loss_fn().backward()
    out = []
    for name, p in params:
        flat = p.data.view(-1)
        for _ in range(picks_per_param):
            i = int(torch.randint(flat.numel(), (1,), generator=gen))
            analytic = float(p.grad.view(-1)[i])
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
            numeric = (up - down) / (2 * eps)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            out.append((name, i, analytic, numeric, rel))
    return out


ACCEPTANCE_LINES = []


@contextlib.contextmanager
def criterion(number, title):
    """Record one PASS/FAIL line for an acceptance criterion around its checks.

    The body may put a short summary under ``info["detail"]``.
    """
    info = {"detail": ""}
    try:
        yield info
    except BaseException as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else ""
        _record(number, title, False, f"{type(exc).__name__}: {msg}"[:200])
        raise
    _record(number, title, True, info["detail"])


def _record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
