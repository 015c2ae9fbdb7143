# Dev prototype for the learning-sanity acceptance fixture. Not part of the
# package; deleted before finishing.
import time
from fractions import Fraction

import numpy as np

from bidlab import env, evalkit, strategies
from bidlab.logstore import Impression, make_episode, round_half_up
from bidlab.sac.agent import SacConfig

GHOST, LOW, HIGH = 0, 1, 2
SEGMENT_P = (0.30, 0.58, 0.12)
P_LO = (0.003, 0.007)
P_HI = (0.03, 0.05)
GHOST_PRICE = 1200
TRAIN_HIGH_SCALE = 340.0
LOW_REL = (0.55, 0.95)
NOISE_SIGMA = 0.08
BOUNDS = env.BidBounds(0, 2500)


def draw_segments(rng, n):
    segs = rng.choice(3, size=n, p=SEGMENT_P)
    pctr = np.where(
        segs == HIGH,
        rng.uniform(*P_HI, size=n),
        rng.uniform(*P_LO, size=n),
    )
    click = (rng.random(n) < pctr).astype(np.int64)
    return segs, pctr, click


def build_train_episodes(rng, n_episodes, ep_len):
    """Training market: low imps sit under a reference linear bid, high imps
    are priced beyond any base bid's reach, ghosts are unwinnable filler."""
    all_segs, all_pctr, all_click = draw_segments(rng, n_episodes * ep_len)
    avg = float(all_pctr.mean())
    b_ref = 76.0
    rel = rng.uniform(*LOW_REL, size=all_pctr.shape)
    noise = 1.0 + NOISE_SIGMA * rng.standard_normal(all_pctr.shape)
    market = np.where(
        all_segs == GHOST,
        GHOST_PRICE + (50 * np.abs(rng.standard_normal(all_pctr.shape))).astype(int),
        np.where(
            all_segs == HIGH,
            np.maximum(np.floor(TRAIN_HIGH_SCALE * all_pctr / avg * noise + 0.5), 1),
            np.maximum(np.floor(b_ref * all_pctr / avg * rel + 0.5), 1),
        ),
    ).astype(np.int64)
    eps = []
    for e in range(n_episodes):
        sl = slice(e * ep_len, (e + 1) * ep_len)
        imps = [
            Impression(i, float(p), int(m), int(c), f"train{e:02d}")
            for i, (p, m, c) in enumerate(
                zip(all_pctr[sl], market[sl], all_click[sl])
            )
        ]
        eps.append(make_episode(f"train{e:02d}", imps))
    return eps, avg


def build_test_episodes(rng, lin, n_episodes, ep_len):
    """Test market: high-pctr markets are 1.3x the calibrated linear bid
    plus noise, so the optimal adjustment is positive."""
    eps = []
    for e in range(n_episodes):
        segs, pctr, click = draw_segments(rng, ep_len)
        lin_bid = np.floor(pctr * lin.base_bid / lin.avg_pctr + 0.5)
        rel = rng.uniform(*LOW_REL, size=ep_len)
        noise = 1.0 + NOISE_SIGMA * rng.standard_normal(ep_len)
        market = np.where(
            segs == GHOST,
            GHOST_PRICE + (50 * np.abs(rng.standard_normal(ep_len))).astype(int),
            np.where(
                segs == HIGH,
                np.ceil(1.3 * lin_bid * noise),
                np.maximum(np.floor(lin_bid * rel + 0.5), 1),
            ),
        ).astype(np.int64)
        market = np.maximum(market, 1)
        imps = [
            Impression(i, float(p), int(m), int(c), f"test{e:02d}")
            for i, (p, m, c) in enumerate(zip(pctr, market[:], click))
        ]
        eps.append(make_episode(f"test{e:02d}", imps))
    return eps


def run_seed(seed):
    t0 = time.time()
    rng = np.random.default_rng(seed)
    train_eps, avg = build_train_episodes(rng, 5, 10_000)
    frac = Fraction(1, 4)
    train_budgets = {e.period_id: evalkit.fraction_budget(e, frac) for e in train_eps}
    t1 = time.time()
    lin = strategies.calibrate_lin(train_eps, train_budgets, BOUNDS)
    t2 = time.time()
    test_eps = build_test_episodes(rng, lin, 2, 10_000)

    cfg = SacConfig(
        train_every=5_000,
        rounds_per_training=64,
        batch_size=256,
        lr_q=1e-3,
        lr_actor=1e-3,
        lr_alpha=1e-3,
    )
    result = evalkit.train_policy(
        train_eps, lin, train_budgets, cfg, seed=seed, epochs=5,
        bounds=BOUNDS, normalize_case2=True,
    )
    t3 = time.time()

    lin_clicks = 0
    sac_clicks = 0
    for ep in test_eps:
        budget = evalkit.fraction_budget(ep, frac)
        lin_clicks += env.replay_static(
            ep, strategies.LinBidder(lin), budget, BOUNDS
        ).clicks_won
    cells = []
    for ep in test_eps:
        cells.extend(
            evalkit.evaluate_policy([ep], result.bundle, lin, frac, BOUNDS)
        )
    sac_clicks = sum(c.report.clicks_won for c in cells)
    t4 = time.time()

    # inspect the learned greedy action on a few states
    from bidlab.sac.policy import policy_mean_action
    probe = [
        policy_mean_action(result.bundle.actor, np.array([1.0, b, i]))
        for b in (1.0, 0.5) for i in (1.0, 0.5)
    ]
    print(
        f"seed {seed}: base={lin.base_bid} lin={lin_clicks} sac={sac_clicks} "
        f"ratio={sac_clicks / max(lin_clicks, 1):.2f} "
        f"alpha={result.bundle.alpha:.3f} probe={[round(a, 2) for a in probe]} "
        f"times: synth+cal={t2 - t0:.1f}s train={t3 - t2:.1f}s eval={t4 - t3:.1f}s"
    )
    return lin_clicks, sac_clicks


if __name__ == "__main__":
    ratios = []
    t0 = time.time()
    for seed in (11, 22, 33, 44, 55):
        lin_c, sac_c = run_seed(seed)
        ratios.append(sac_c / max(lin_c, 1))
    ratios.sort()
    print(f"median ratio: {ratios[2]:.3f}  all: {[f'{r:.2f}' for r in ratios]}")
    print(f"total: {time.time() - t0:.1f}s")
