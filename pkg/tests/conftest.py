import numpy as np
import pytest
import torch

from panoscan.context import ModelConfig, ScanpathModel


TINY = ModelConfig(K=2, R=2, S=3, C_v=4, C_h=4, C_c=4, hidden=8, head_hidden=8, visual_channels=2,
                   causal_embed=4, causal_hidden=4, grid_h=2, grid_w=3, seed=7)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def tiny_model():
    return ScanpathModel(TINY)


def tiny_batch(cfg, B, seed=0):
    rng = np.random.default_rng(seed)
    grids = torch.from_numpy(rng.uniform(0, 255, (B, cfg.R, cfg.provider_channels, cfg.grid_h, cfg.grid_w)))
    paths = torch.from_numpy(rng.normal(0, 20, (B, cfg.R, 2 * cfg.R + 1, 2)))
    causal = torch.from_numpy(rng.normal(0, 20, (B, cfg.S, 2)))
    return grids, paths, causal


def finite_difference_check(model, batch, centers, step=0.2, h=1e-5, stride=1):
    """Largest gradient mismatch over every parameter entry.

    Mismatch is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8), so
    near-zero gradients are judged on an absolute 1e-8 scale.
    """
    from panoscan.context.train import code_length_loss

    def loss():
        return code_length_loss(*model(*batch), centers, step)

    model.zero_grad()
    loss().backward()
    worst = 0.0
    with torch.no_grad():
        for p in model.parameters():
            flat = p.view(-1)
            grad = p.grad.view(-1)
            for i in range(0, flat.numel(), stride):
                old = flat[i].item()
                flat[i] = old + h
                up = loss().item()
                flat[i] = old - h
                down = loss().item()
                flat[i] = old
                num = (up - down) / (2 * h)
                ana = grad[i].item()
                scale = max(abs(num), abs(ana), 1e-8)
                worst = max(worst, abs(num - ana) / scale)
    return worst


ACCEPTANCE = {}


def record(criterion, passed, detail):
    """Store and print one acceptance line; the session summary repeats them in order."""
    line = f"criterion {criterion:>2} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
