"""Behavior model tests: descriptors, KDE machinery, sampling, ladder."""

from fractions import Fraction

import numpy as np
import pytest

from rallyforge.behavior import (
    FEATURES,
    RELAX_ORDER,
    ConditionalModel,
    DescriptorConfig,
    InsufficientData,
    NoData,
    PointStateDescriptor,
    RecoveryDescriptor,
    build_descriptor,
    descriptor_for_clip,
    fit_models,
    kde_mode,
    kde_pdf,
    kde_sample,
    loo_bandwidth,
    load_model,
    recovery_target,
    sample_shot_selection,
    save_model,
)
from rallyforge.clipdb import TRACE_DT, ClipDatabase, ShotCycleClip
from rallyforge.court import CourtSpec, region_cell
from rallyforge.physics import FlightParams, LaunchState, SpinKind, simulate_trajectory
from rallyforge.shots import SHOT_CODE, ShotOutcome, ShotType

COURT = CourtSpec()
CFG = DescriptorConfig()


def cell_clip(clip_id, shot_type=ShotType.FOREHAND_TOPSPIN,
              start_xy=(0.0, 12.0), contact_xy=(0.0, 12.0),
              opp_xy=(0.0, -12.0), incoming_contact=(0.5, -12.0, 1.0),
              incoming_bounce=(0.0, 8.0), placement=(2.0, -8.0),
              recovery_xy=(0.0, 12.5), outcome=ShotOutcome.IN_PLAY,
              player="ana", opponent="bo"):
    """Hand-built clip whose descriptor features are fully controlled."""
    t_c, t_r = 0.4, 1.0
    n = round(t_r / TRACE_DT) + 1
    i_c = round(t_c / TRACE_DT)
    ptrace = np.empty((n, 2))
    for i in range(n):
        if i <= i_c:
            u = i / i_c
            ptrace[i] = (1 - u) * np.asarray(start_xy) + u * np.asarray(contact_xy)
        else:
            u = (i - i_c) / (n - 1 - i_c)
            ptrace[i] = (1 - u) * np.asarray(contact_xy) + u * np.asarray(recovery_xy)
    otrace = np.tile(np.asarray(opp_xy, dtype=float), (n, 1))
    pose = np.zeros((n, 14, 2))
    return ShotCycleClip(
        clip_id=clip_id, player_id=player, opponent_id=opponent,
        shot_type=shot_type, outcome=outcome,
        t_c=t_c, t_r=t_r,
        contact_pos=(contact_xy[0], contact_xy[1], 1.0),
        t_b=0.9, placement=tuple(placement),
        player_trace=ptrace, opponent_trace=otrace, pose_trace=pose,
        incoming_contact=tuple(incoming_contact),
        incoming_bounce=tuple(incoming_bounce),
        trace_dt=TRACE_DT,
    )


def db_from_clips(clips):
    return ClipDatabase(court=COURT, flight=FlightParams(),
                        players={"ana": "right", "bo": "right"}, clips=clips)


def incoming_flight(origin=(0.5, -12.0, 1.0), aim=(0.0, 12.0), v_h=28.0,
                    v_z=4.5):
    d = np.asarray(aim[:2], dtype=float) - np.asarray(origin[:2], dtype=float)
    d = d / np.hypot(*d)
    launch = LaunchState(origin=origin, direction=(d[0], d[1]), v_h=v_h,
                         v_z=v_z, v_spin=5.0, spin_kind=SpinKind.TOPSPIN)
    return simulate_trajectory(launch, FlightParams(), COURT, max_time=3.0)


class TestBuildDescriptor:
    def test_stationary_player_straight_ball_bin_zero(self):
        traj = incoming_flight(origin=(0.0, -12.0, 1.0), aim=(0.0, 12.0))
        t, contact = None, None
        desc, est = build_descriptor(traj, (0.0, 12.0), (0.0, -12.5), 0.0,
                                     COURT, CFG)
        assert est.reach_speed < 0.3
        assert desc.velocity == 0

    def test_four_meters_in_one_second_is_bin_two(self):
        # Construct a flight whose intercept sits ~4 m from the player about
        # one second out, then verify against the binning rule directly.
        traj = incoming_flight(origin=(0.0, -12.0, 1.0), aim=(4.0, 12.0),
                               v_h=26.0)
        desc, est = build_descriptor(traj, (0.0, 12.0), (0.0, -12.5), 0.0,
                                     COURT, CFG)
        from rallyforge.court import velocity_bin
        assert desc.velocity == velocity_bin(est.reach_speed, CFG.bin_config)
        manual = np.hypot(est.position[0] - 0.0, est.position[1] - 12.0) / est.time
        assert est.reach_speed == pytest.approx(manual)

    def test_descriptor_invariant_to_within_region_jitter(self):
        traj = incoming_flight()
        d1, _ = build_descriptor(traj, (0.4, 12.0), (0.2, -12.4), 0.0, COURT, CFG)
        d2, _ = build_descriptor(traj, (0.5, 12.2), (0.3, -12.2), 0.0, COURT, CFG)
        assert d1 == d2


class TestFitModels:
    def test_single_clip_cell_is_point_mass(self):
        db = db_from_clips([cell_clip(1, shot_type=ShotType.BACKHAND_TOPSPIN)])
        model = fit_models(db, "ana")
        desc = descriptor_for_clip(db.clips[0], COURT, CFG)
        rows, k, _ = model.lookup(desc)
        assert k == 0
        probs = model.shot_type_probs(rows)
        assert probs == {ShotType.BACKHAND_TOPSPIN: 1.0}

    def test_categorical_matches_exact_counts(self):
        clips = [cell_clip(1, shot_type=ShotType.FOREHAND_TOPSPIN),
                 cell_clip(2, shot_type=ShotType.FOREHAND_TOPSPIN),
                 cell_clip(3, shot_type=ShotType.BACKHAND_TOPSPIN)]
        model = fit_models(db_from_clips(clips), "ana")
        desc = descriptor_for_clip(clips[0], COURT, CFG)
        rows, _, _ = model.lookup(desc)
        probs = model.shot_type_probs(rows)
        assert probs[ShotType.FOREHAND_TOPSPIN] == pytest.approx(2 / 3, abs=1e-12)
        assert probs[ShotType.BACKHAND_TOPSPIN] == pytest.approx(1 / 3, abs=1e-12)
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-9)

    def test_insufficient_data(self):
        db = db_from_clips([cell_clip(1)])
        with pytest.raises(InsufficientData):
            fit_models(db, "nobody")

    def test_opponent_filter(self):
        clips = [cell_clip(1, opponent="bo"), cell_clip(2, opponent="bo")]
        model = fit_models(db_from_clips(clips), "ana", opponent="bo")
        assert len(model) == 2
        with pytest.raises(InsufficientData):
            fit_models(db_from_clips(clips), "ana", opponent="carla")

    def test_handedness_filter_pools_matching_opponents(self):
        clips = [cell_clip(1, opponent="bo")]
        db = db_from_clips(clips)
        model = fit_models(db, "ana", opponent_handedness="right")
        assert len(model) == 1
        with pytest.raises(InsufficientData):
            fit_models(db, "ana", opponent_handedness="left")


class TestKDE:
    def test_mass_integrates_to_one_1d(self):
        support = np.array([[20.0], [23.0], [25.5]])
        bw = 2.0
        xs = np.linspace(0.0, 50.0, 2001)[:, None]
        dens = kde_pdf(xs, support, bw)
        mass = np.trapezoid(dens, xs[:, 0])
        assert mass == pytest.approx(1.0, abs=1e-3)

    def test_mass_integrates_to_one_2d(self):
        rng = np.random.default_rng(0)
        support = rng.uniform(-2, 2, size=(6, 2))
        bw = 0.75
        g = np.linspace(-8, 8, 201)
        xx, yy = np.meshgrid(g, g)
        pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
        dens = kde_pdf(pts, support, bw).reshape(xx.shape)
        mass = np.trapezoid(np.trapezoid(dens, g, axis=1), g)
        assert mass == pytest.approx(1.0, abs=1e-3)

    def test_loo_bandwidth_prefers_scale_of_data(self):
        rng = np.random.default_rng(1)
        tight = rng.normal(0.0, 0.3, size=(80, 2))
        wide = rng.normal(0.0, 3.0, size=(80, 2))
        bw_tight = loo_bandwidth(tight, (0.25, 0.5, 0.75, 1.0, 1.5))
        bw_wide = loo_bandwidth(wide, (0.25, 0.5, 0.75, 1.0, 1.5))
        assert bw_tight < bw_wide

    def test_loo_bandwidth_degenerate_takes_largest(self):
        assert loo_bandwidth(np.array([[1.0, 2.0]]), (0.25, 0.5)) == 0.5

    def test_rejection_threshold_is_respected(self):
        rng = np.random.default_rng(7)
        support = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
        bw = 0.5
        peak = np.max(kde_pdf(support, support, bw))
        for _ in range(500):
            x = kde_sample(support, bw, rng)
            assert kde_pdf(x[None], support, bw)[0] >= 0.1 * peak - 1e-12

    def test_mode_matches_dense_grid(self):
        # Cluster spread well under the bandwidth, plus one far outlier:
        # the support-restricted mode must land within a grid cell of the
        # continuous argmax.
        support = np.array([[0.0, 0.0], [0.06, 0.04], [-0.05, 0.08], [5.0, 5.0]])
        bw = 0.5
        mode = kde_mode(support, bw)
        g = np.linspace(-1, 6, 141)  # 0.05 m grid
        xx, yy = np.meshgrid(g, g)
        pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
        dens = kde_pdf(pts, support, bw)
        grid_mode = pts[int(np.argmax(dens))]
        assert np.linalg.norm(mode - grid_mode) <= 0.1 + 1e-9

    def test_two_cluster_sampling_balance(self):
        rng = np.random.default_rng(11)
        support = np.concatenate([np.tile([[-2.5, -8.0]], (5, 1)),
                                  np.tile([[2.5, -8.0]], (5, 1))])
        bw = 0.5
        hits = 0
        n = 1000
        for _ in range(n):
            x = kde_sample(support, bw, rng)
            hits += x[0] > 0
        assert abs(hits / n - 0.5) <= 0.05


class TestSampling:
    def _model(self, clips):
        return fit_models(db_from_clips(clips), "ana")

    def test_single_clip_placement_near_support_and_mode_equals_it(self):
        clip = cell_clip(1, placement=(2.0, -8.0))
        model = self._model([clip])
        desc = descriptor_for_clip(clip, COURT, CFG)
        rng = np.random.default_rng(3)
        sel = sample_shot_selection(model, desc, rng)
        assert np.hypot(sel.placement[0] - 2.0, sel.placement[1] + 8.0) \
            <= 3 * model.placement_bw
        assert np.allclose(kde_mode(model.placement, model.placement_bw),
                           [2.0, -8.0])

    def test_sampled_velocity_positive(self):
        model = self._model([cell_clip(1)])
        desc = descriptor_for_clip(cell_clip(1), COURT, CFG)
        rng = np.random.default_rng(5)
        for _ in range(50):
            sel = sample_shot_selection(model, desc, rng)
            assert sel.velocity > 0

    def test_determinism_same_seed(self):
        clips = [cell_clip(i, placement=(2.0 - 0.2 * i, -8.0)) for i in range(1, 6)]
        model = self._model(clips)
        desc = descriptor_for_clip(clips[0], COURT, CFG)
        a = [sample_shot_selection(model, desc, np.random.default_rng(42))
             for _ in range(1)]
        b = [sample_shot_selection(model, desc, np.random.default_rng(42))
             for _ in range(1)]
        assert a[0].shot_type == b[0].shot_type
        assert a[0].velocity == b[0].velocity
        assert np.array_equal(a[0].placement, b[0].placement)


class TestRecovery:
    def test_all_back_court_recoveries_give_p_zero(self):
        clips = [cell_clip(i, recovery_xy=(0.3 * i, 12.5)) for i in range(1, 4)]
        model = fit_models(db_from_clips(clips), "ana")
        desc = descriptor_for_clip(clips[0], COURT, CFG)
        rdesc = RecoveryDescriptor(desc, region_cell(2.0, -8.0, COURT))
        rows, _, _ = model.lookup(rdesc.base, rdesc.placement_cell)
        assert model.approach_probability(rows) == 0.0
        for seed in range(5):
            choice = recovery_target(model, rdesc, np.random.default_rng(seed))
            assert choice.approach is False

    def test_single_clip_recovery_is_exact(self):
        clip = cell_clip(1, recovery_xy=(0.8, 12.7))
        model = fit_models(db_from_clips([clip]), "ana")
        desc = descriptor_for_clip(clip, COURT, CFG)
        rdesc = RecoveryDescriptor(desc, region_cell(*clip.placement, COURT))
        choice = recovery_target(model, rdesc, np.random.default_rng(0))
        assert np.allclose(choice.position, clip.recovery_pos)

    def test_bernoulli_equals_exact_fraction(self):
        # Two front recoveries out of five: p must be exactly 2/5.
        clips = [cell_clip(i, recovery_xy=(0.0, 12.5)) for i in range(1, 4)]
        clips += [cell_clip(i, recovery_xy=(0.0, 3.5)) for i in (4, 5)]
        model = fit_models(db_from_clips(clips), "ana")
        desc = descriptor_for_clip(clips[0], COURT, CFG)
        rows, _, _ = model.lookup(desc, region_cell(2.0, -8.0, COURT))
        p = model.approach_probability(rows)
        assert Fraction(p).limit_denominator(10) == Fraction(2, 5)


def direct_model(cells, shots=None, **kwargs):
    """Build a ConditionalModel straight from a cell array for ladder tests."""
    n = len(cells)
    placement = kwargs.get("placement", np.tile([[2.0, -8.0]], (n, 1)))
    return ConditionalModel(
        player_id="ana", opponent_filter=None, handedness_filter=None,
        config=CFG,
        cells=np.asarray(cells, dtype=int),
        shot=np.asarray(shots if shots is not None
                        else [SHOT_CODE[ShotType.FOREHAND_TOPSPIN]] * n, dtype=int),
        v_b=np.full(n, 22.0),
        placement=np.asarray(placement, dtype=float),
        recovery=np.tile([[0.0, 12.5]], (n, 1)),
        approach=np.zeros(n, dtype=bool),
        placement_cell=np.asarray(kwargs.get("placement_cell", [0] * n), dtype=int),
        clip_ids=np.arange(n),
        velocity_bw=2.0, placement_bw=0.5, recovery_bw=0.5,
    )


class TestMarginalizationLadder:
    TARGET = PointStateDescriptor(1, 2, 3, 4, 0)

    def test_exact_cell_is_k0(self):
        model = direct_model([self.TARGET.key, (0, 0, 0, 0, 0)])
        rows, k, relaxed = model.lookup(self.TARGET)
        assert k == 0 and relaxed == ()
        assert list(rows) == [0]

    def test_velocity_relaxed_first(self):
        # Differs only in the velocity bin: found at k=1, velocity first.
        model = direct_model([(1, 2, 3, 4, 3)])
        rows, k, relaxed = model.lookup(self.TARGET)
        assert k == 1 and relaxed == ("velocity",)

    def test_single_feature_priority_order(self):
        # For each relaxable feature, a cell differing only in that feature
        # must be found at k=1 with exactly that feature relaxed.
        diffs = {
            "velocity": (1, 2, 3, 4, 3),
            "ball_bounce": (1, 2, 3, 5, 0),
            "ball_start": (1, 2, 5, 4, 0),
            "opponent": (1, 5, 3, 4, 0),
        }
        for name, cell in diffs.items():
            model = direct_model([cell])
            rows, k, relaxed = model.lookup(self.TARGET)
            assert k == 1 and relaxed == (name,), name

    def test_priority_when_multiple_candidates(self):
        # Both a velocity-relaxed and an opponent-relaxed cell exist; the
        # less important feature (velocity) must win.
        model = direct_model([(1, 5, 3, 4, 0), (1, 2, 3, 4, 2)])
        rows, k, relaxed = model.lookup(self.TARGET)
        assert k == 1 and relaxed == ("velocity",)
        assert list(rows) == [1]

    def test_k2_subset_order(self):
        # Cell differs in velocity and ball_bounce: k=2 with that subset.
        model = direct_model([(1, 2, 3, 9, 4)])
        rows, k, relaxed = model.lookup(self.TARGET)
        assert k == 2 and relaxed == ("velocity", "ball_bounce")

    def test_player_region_never_relaxed(self):
        # A cell differing in the player region matches nothing at any k.
        model = direct_model([(0, 2, 3, 4, 0)])
        with pytest.raises(NoData):
            model.lookup(self.TARGET)

    def test_marginal_pool_equals_union_of_member_cells(self):
        cells = [(1, 2, 3, 4, 0), (1, 2, 3, 4, 1), (1, 2, 3, 4, 4),
                 (1, 2, 3, 0, 0), (0, 2, 3, 4, 0)]
        model = direct_model(cells)
        probe = PointStateDescriptor(1, 2, 3, 4, 2)  # empty exact cell
        rows, k, relaxed = model.lookup(probe)
        assert k == 1 and relaxed == ("velocity",)
        # Brute-force: all rows that agree on every non-relaxed feature.
        expect = [i for i, c in enumerate(cells)
                  if (c[0], c[1], c[2], c[3]) == (1, 2, 3, 4)]
        assert sorted(rows) == expect

    def test_extended_fallback_pools_all_rows(self):
        model = direct_model([(0, 0, 0, 0, 0)])
        probe = PointStateDescriptor(5, 0, 0, 0, 0)
        rng = np.random.default_rng(0)
        sel = sample_shot_selection(model, probe, rng)
        assert sel.relaxation == 6


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        clips = [cell_clip(i, placement=(2.0 - 0.3 * i, -8.0)) for i in range(1, 7)]
        model = fit_models(db_from_clips(clips), "ana")
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.player_id == model.player_id
        assert loaded.velocity_bw == model.velocity_bw
        assert np.array_equal(loaded.cells, model.cells)
        assert np.array_equal(loaded.placement, model.placement)
        desc = descriptor_for_clip(clips[0], COURT, CFG)
        a = sample_shot_selection(model, desc, np.random.default_rng(9))
        b = sample_shot_selection(loaded, desc, np.random.default_rng(9))
        assert a.shot_type == b.shot_type
        assert np.array_equal(a.placement, b.placement)


class TestOnSyntheticDB:
    def test_models_fit_and_sample(self, medium_db):
        model = fit_models(medium_db, "ana")
        assert len(model) > 100
        rng = np.random.default_rng(1)
        # Probe with descriptors taken from the data itself.
        desc = PointStateDescriptor(*[int(v) for v in model.cells[0]])
        sel = sample_shot_selection(model, desc, rng)
        assert sel.relaxation == 0
        assert sel.shot_type in ShotType
        rdesc = RecoveryDescriptor(desc, int(model.placement_cell[0]))
        rec = recovery_target(model, rdesc, rng)
        assert np.isfinite(rec.position).all()

    def test_error_mass_outside_court_matches_kde(self, medium_db):
        """Out-of-court sampling rate tracks the KDE mass outside the
        singles boundary (the model's implicit error encoding)."""
        model = fit_models(medium_db, "ana")
        desc = PointStateDescriptor(*[int(v) for v in model.cells[0]])
        rows, _, _ = model.lookup(desc)
        shot = model.shot[rows[0]]
        rows_c = rows[model.shot[rows] == shot]
        support = model.placement[rows_c]
        bw = model.placement_bw
        # Numerical out-of-court mass restricted to the >= 10% density
        # region (the sampler rejects below that threshold).
        g = np.linspace(-10, 10, 201)
        xx, yy = np.meshgrid(g, g - 6.0)
        pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
        dens = kde_pdf(pts, support, bw)
        peak = np.max(kde_pdf(support, support, bw))
        keep = dens >= 0.1 * peak
        half_w = medium_db.court.singles_width / 2
        half_l = medium_db.court.half_length
        outside = keep & ((np.abs(pts[:, 0]) > half_w) | (np.abs(pts[:, 1]) > half_l))
        expect = dens[keep & outside].sum() / dens[keep].sum()
        rng = np.random.default_rng(17)
        n = 600
        hits = 0
        for _ in range(n):
            x = kde_sample(support, bw, rng)
            hits += (abs(x[0]) > half_w) or (abs(x[1]) > half_l)
        se = 3 * np.sqrt(max(expect * (1 - expect), 0.002) / n)
        assert abs(hits / n - expect) <= se + 0.02
