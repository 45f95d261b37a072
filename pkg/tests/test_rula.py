"""Worksheet scoring tests: hand-computed fixtures and table cross-checks.

The lookup tables are re-entered here in a different layout than the
implementation uses (flat rows keyed by tuple); every cell is compared.
Fixture sub-scores and grand scores were computed by hand on the
worksheet using the package's declared angle deadbands.
"""

import numpy as np
import pytest

from ergopose import rula
from ergopose.kinematics import neutral_posture

DEG = np.pi / 180.0

# Independent re-entry of Table A: (upper_arm, lower_arm) -> scores for
# (wrist, twist) = (1,1),(1,2),(2,1),(2,2),(3,1),(3,2),(4,1),(4,2).
TABLE_A_FLAT = {
    (1, 1): [1, 2, 2, 2, 2, 3, 3, 3],
    (1, 2): [2, 2, 2, 2, 3, 3, 3, 3],
    (1, 3): [2, 3, 3, 3, 3, 3, 4, 4],
    (2, 1): [2, 3, 3, 3, 3, 4, 4, 4],
    (2, 2): [3, 3, 3, 3, 3, 4, 4, 4],
    (2, 3): [3, 4, 4, 4, 4, 4, 5, 5],
    (3, 1): [3, 3, 4, 4, 4, 4, 5, 5],
    (3, 2): [3, 4, 4, 4, 4, 4, 5, 5],
    (3, 3): [4, 4, 4, 4, 4, 5, 5, 5],
    (4, 1): [4, 4, 4, 4, 4, 5, 5, 5],
    (4, 2): [4, 4, 4, 4, 4, 5, 5, 5],
    (4, 3): [4, 4, 4, 5, 5, 5, 6, 6],
    (5, 1): [5, 5, 5, 5, 5, 6, 6, 7],
    (5, 2): [5, 6, 6, 6, 6, 7, 7, 7],
    (5, 3): [6, 6, 6, 7, 7, 7, 7, 8],
    (6, 1): [7, 7, 7, 7, 7, 8, 8, 9],
    (6, 2): [8, 8, 8, 8, 8, 9, 9, 9],
    (6, 3): [9, 9, 9, 9, 9, 9, 9, 9],
}

# Independent re-entry of Table B: neck -> scores for
# (trunk, legs) = (1,1),(1,2),(2,1),(2,2),...,(6,1),(6,2).
TABLE_B_FLAT = {
    1: [1, 3, 2, 3, 3, 4, 5, 5, 6, 6, 7, 7],
    2: [2, 3, 2, 3, 4, 5, 5, 5, 6, 7, 7, 7],
    3: [3, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 7],
    4: [5, 5, 5, 6, 6, 7, 7, 7, 7, 7, 8, 8],
    5: [7, 7, 7, 7, 7, 8, 8, 8, 8, 8, 8, 8],
    6: [8, 8, 8, 8, 8, 8, 8, 9, 9, 9, 9, 9],
}

# Independent re-entry of Table C, rows score_c 1..8, columns score_d 1..7.
TABLE_C_ROWS = [
    [1, 2, 3, 3, 4, 5, 5],
    [2, 2, 3, 4, 4, 5, 5],
    [3, 3, 3, 4, 4, 5, 6],
    [3, 3, 3, 4, 5, 6, 6],
    [4, 4, 4, 5, 6, 7, 7],
    [4, 4, 5, 6, 6, 7, 7],
    [5, 5, 6, 6, 7, 7, 7],
    [5, 5, 6, 7, 7, 7, 7],
]


def test_table_a_matches_independent_copy():
    for (ua, la), flat in TABLE_A_FLAT.items():
        for wi, wrist in enumerate((1, 2, 3, 4)):
            for ti, twist in enumerate((1, 2)):
                assert rula.TABLE_A[ua - 1, la - 1, wrist - 1, twist - 1] == flat[2 * wi + ti], \
                    f"Table A mismatch at UA{ua} LA{la} W{wrist} T{twist}"


def test_table_b_matches_independent_copy():
    for neck, flat in TABLE_B_FLAT.items():
        for ti, trunk in enumerate(range(1, 7)):
            for li, legs in enumerate((1, 2)):
                assert rula.TABLE_B[neck - 1, trunk - 1, legs - 1] == flat[2 * ti + li], \
                    f"Table B mismatch at N{neck} T{trunk} L{legs}"


def test_table_c_matches_independent_copy():
    np.testing.assert_array_equal(rula.TABLE_C, np.array(TABLE_C_ROWS))


def test_grand_matches_table_c_for_all_in_range_pairs():
    for c in range(1, 9):
        for d in range(1, 9):
            expected = TABLE_C_ROWS[min(c, 8) - 1][min(d, 7) - 1]
            assert rula.grand_from_tables(c, d) == expected


def q_deg(torso=0.0, lat=0.0, rot=0.0, sh=0.0, abd=0.0, shrot=0.0,
          elbow=90.0, pron=0.0, wrist=0.0, dev=0.0):
    return np.array([torso, lat, rot, sh, abd, shrot, elbow, pron, wrist, dev]) * DEG


def ctx(**kwargs):
    return rula.TaskContext(**kwargs)


# (name, q, ctx, expected sub-scores and grand) — hand-computed.
FIXTURES = [
    ("neutral", q_deg(), ctx(neck_angle=0.1),
     dict(upper_arm=1, lower_arm=1, wrist=1, wrist_twist=1, table_a=1, muscle_add=0,
          force_add=0, score_c_wrist_arm=1, neck=1, trunk=1, legs=1, table_b=1,
          score_d_neck_trunk_leg=1, grand=1, action="acceptable")),
    ("slight_trunk_flexion", q_deg(torso=10), ctx(),
     dict(trunk=2, table_b=2, score_d_neck_trunk_leg=2, grand=2, action="acceptable")),
    ("upper_arm_band_edge_20", q_deg(sh=20), ctx(),
     dict(upper_arm=1, table_a=1, grand=1)),
    ("upper_arm_band_2", q_deg(sh=21), ctx(),
     dict(upper_arm=2, table_a=2, score_c_wrist_arm=2, grand=2)),
    ("upper_arm_band_3", q_deg(sh=46), ctx(),
     dict(upper_arm=3, table_a=3, grand=3, action="investigate")),
    ("upper_arm_band_4", q_deg(sh=91), ctx(),
     dict(upper_arm=4, table_a=4, grand=3)),
    ("upper_arm_extension", q_deg(sh=-25), ctx(),
     dict(upper_arm=2, table_a=2, grand=2)),
    ("upper_arm_raised", q_deg(sh=91), ctx(shoulder_raised=True),
     dict(upper_arm=5, table_a=5, score_c_wrist_arm=5, grand=4)),
    ("arm_supported_floor", q_deg(), ctx(arm_supported=True),
     dict(upper_arm=1, table_a=1, grand=1)),
    ("lower_arm_band_2", q_deg(elbow=59), ctx(),
     dict(lower_arm=2, table_a=2, grand=2)),
    ("lower_arm_across_midline", q_deg(elbow=30), ctx(working_across_midline=True),
     dict(lower_arm=3, table_a=2, grand=2)),
    ("wrist_band_2", q_deg(wrist=10), ctx(),
     dict(wrist=2, table_a=2, grand=2)),
    ("wrist_band_3_deviated", q_deg(wrist=20), ctx(wrist_bent_from_midline=True),
     dict(wrist=4, table_a=3, grand=3)),
    ("wrist_twist_near_end", q_deg(pron=80), ctx(),
     dict(wrist_twist=2, table_a=2, grand=2)),
    ("wrist_twist_flag", q_deg(), ctx(wrist_twist_extreme=True),
     dict(wrist_twist=2, table_a=2, grand=2)),
    ("neck_band_2", q_deg(), ctx(neck_angle=15 * DEG),
     dict(neck=2, table_b=2, grand=2)),
    ("neck_band_3_twisted", q_deg(), ctx(neck_angle=25 * DEG, neck_twist_or_side_bend=True),
     dict(neck=4, table_b=5, score_d_neck_trunk_leg=5, grand=4)),
    ("neck_extension", q_deg(), ctx(neck_angle=-10 * DEG),
     dict(neck=4, table_b=5, grand=4)),
    ("trunk_band_3_neck_3", q_deg(torso=40), ctx(neck_angle=25 * DEG),
     dict(neck=3, trunk=3, table_b=4, grand=3)),
    ("trunk_band_4_twist_side", q_deg(torso=65, lat=25, rot=25), ctx(),
     dict(trunk=6, table_b=7, score_d_neck_trunk_leg=7, grand=5,
          action="investigate_change_soon")),
    ("legs_unsupported", q_deg(), ctx(legs_supported=False),
     dict(legs=2, table_b=3, grand=3)),
    ("trunk_unsupported_upright", q_deg(), ctx(trunk_supported=False),
     dict(trunk=2, table_b=2, grand=2)),
    ("static_muscle", q_deg(), ctx(static_muscle_use=True),
     dict(muscle_add=1, score_c_wrist_arm=2, score_d_neck_trunk_leg=2, grand=2)),
    ("repetition_low_load", q_deg(), ctx(repetition=True, load_category=rula.LoadCategory.LOW),
     dict(muscle_add=1, force_add=1, score_c_wrist_arm=3, score_d_neck_trunk_leg=3, grand=3)),
    ("medium_load", q_deg(), ctx(load_category=rula.LoadCategory.MEDIUM),
     dict(force_add=2, score_c_wrist_arm=3, score_d_neck_trunk_leg=3, grand=3)),
    ("high_load_static", q_deg(), ctx(load_category=rula.LoadCategory.HIGH,
                                      static_muscle_use=True),
     dict(muscle_add=1, force_add=3, score_c_wrist_arm=5, score_d_neck_trunk_leg=5, grand=6,
          action="investigate_change_soon")),
    ("spec_extreme", q_deg(rot=25, sh=103.1, elbow=0, wrist=28.6),
     ctx(load_category=rula.LoadCategory.HIGH, static_muscle_use=True, shoulder_raised=True,
         arm_abducted=True, wrist_bent_from_midline=True, trunk_supported=False,
         neck_angle=0.1),
     dict(upper_arm=6, lower_arm=2, wrist=4, wrist_twist=1, table_a=9, muscle_add=1,
          force_add=3, score_c_wrist_arm=13, neck=1, trunk=3, legs=1, table_b=3,
          score_d_neck_trunk_leg=7, grand=7, action="investigate_change_now")),
    ("posture_only_grand_5", q_deg(torso=65, lat=25, sh=46, elbow=80), ctx(),
     dict(upper_arm=3, lower_arm=1, table_a=3, trunk=5, table_b=6, grand=5)),
    ("grand_4_mixed", q_deg(torso=30, sh=95, elbow=120), ctx(legs_supported=False),
     dict(upper_arm=4, lower_arm=2, table_a=4, trunk=3, legs=2, table_b=4, grand=4)),
    ("ceiling", q_deg(torso=70, lat=30, rot=30, sh=120, elbow=10, pron=85, wrist=30),
     ctx(load_category=rula.LoadCategory.HIGH, static_muscle_use=True, repetition=True,
         shoulder_raised=True, arm_abducted=True, working_across_midline=True,
         wrist_bent_from_midline=True, trunk_supported=False, legs_supported=False,
         neck_angle=30 * DEG, neck_twist_or_side_bend=True),
     dict(upper_arm=6, lower_arm=3, wrist=4, wrist_twist=2, table_a=9, muscle_add=1,
          force_add=3, score_c_wrist_arm=13, neck=4, trunk=6, legs=2, table_b=8,
          score_d_neck_trunk_leg=12, grand=7, action="investigate_change_now")),
]


@pytest.mark.parametrize("name,q,context,expected", FIXTURES,
                         ids=[f[0] for f in FIXTURES])
def test_hand_computed_fixtures(name, q, context, expected):
    a = rula.score_posture(q, context)
    for field, value in expected.items():
        if field == "action":
            assert a.action_level == rula.ActionLevel(value), name
        else:
            assert getattr(a, field) == value, f"{name}: {field}"


def test_fixture_count_and_grand_coverage():
    assert len(FIXTURES) == 30
    grands = {f[3]["grand"] for f in FIXTURES}
    assert grands == {1, 2, 3, 4, 5, 6, 7}


def test_grand_consistent_with_subscore_tables():
    rng = np.random.default_rng(0)
    from ergopose.config import default_limits

    lim = default_limits()
    for _ in range(500):
        q = rng.uniform(lim.q_min, lim.q_max)
        c = rula.TaskContext(load_category=rula.LoadCategory(rng.integers(0, 4)),
                             static_muscle_use=bool(rng.integers(0, 2)),
                             legs_supported=bool(rng.integers(0, 2)))
        a = rula.score_posture(q, c)
        assert a.table_a == rula.TABLE_A[a.upper_arm - 1, a.lower_arm - 1,
                                         a.wrist - 1, a.wrist_twist - 1]
        assert a.table_b == rula.TABLE_B[a.neck - 1, a.trunk - 1, a.legs - 1]
        assert a.score_c_wrist_arm == a.table_a + a.muscle_add + a.force_add
        assert a.score_d_neck_trunk_leg == a.table_b + a.muscle_add + a.force_add
        assert a.grand == rula.grand_from_tables(a.score_c_wrist_arm,
                                                 a.score_d_neck_trunk_leg)


def test_score_is_pure():
    q = q_deg(torso=33, sh=70, wrist=12)
    c = ctx(static_muscle_use=True)
    assert rula.score_posture(q, c) == rula.score_posture(q.copy(), c)


def test_interpret_bands_and_errors():
    assert rula.interpret(1) == rula.ActionLevel.ACCEPTABLE
    assert rula.interpret(2) == rula.ActionLevel.ACCEPTABLE
    assert rula.interpret(3) == rula.ActionLevel.INVESTIGATE
    assert rula.interpret(4) == rula.ActionLevel.INVESTIGATE
    assert rula.interpret(5) == rula.ActionLevel.INVESTIGATE_CHANGE_SOON
    assert rula.interpret(6) == rula.ActionLevel.INVESTIGATE_CHANGE_SOON
    assert rula.interpret(7) == rula.ActionLevel.INVESTIGATE_CHANGE_NOW
    for bad in (0, 8, -1):
        with pytest.raises(ValueError):
            rula.interpret(bad)


def test_upper_arm_monotone_across_band_boundary():
    c = ctx()
    last = 0
    for deg in (0, 15, 20.1, 30, 45.1, 70, 90.1, 130):
        score = rula.score_posture(q_deg(sh=deg), c).upper_arm
        assert score >= last
        last = score


def test_adding_load_never_decreases_grand():
    rng = np.random.default_rng(1)
    from ergopose.config import default_limits

    lim = default_limits()
    for _ in range(200):
        q = rng.uniform(lim.q_min, lim.q_max)
        grands = [rula.score_posture(q, ctx(load_category=rula.LoadCategory(k))).grand
                  for k in range(4)]
        assert all(b >= a for a, b in zip(grands, grands[1:]))


def test_assessment_invariant_validation():
    with pytest.raises(ValueError):
        rula.RulaAssessment(upper_arm=1, lower_arm=1, wrist=1, wrist_twist=1, table_a=1,
                            muscle_add=0, force_add=0, score_c_wrist_arm=1, neck=1,
                            trunk=1, legs=1, table_b=1, score_d_neck_trunk_leg=1,
                            grand=5, action_level=rula.ActionLevel.INVESTIGATE_CHANGE_SOON)
    with pytest.raises(ValueError):
        rula.RulaAssessment(upper_arm=1, lower_arm=1, wrist=1, wrist_twist=1, table_a=1,
                            muscle_add=0, force_add=0, score_c_wrist_arm=1, neck=1,
                            trunk=1, legs=1, table_b=1, score_d_neck_trunk_leg=1,
                            grand=1, action_level=rula.ActionLevel.INVESTIGATE)


def test_neutral_posture_scores_one():
    a = rula.score_posture(neutral_posture(), ctx())
    assert a.grand == 1
