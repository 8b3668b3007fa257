import numpy as np
import pytest

from gridseries.bid_map import (
    MatchPolicy,
    OfferBook,
    build_offer_book,
    infer_participants,
    match,
    offer_series,
)
from gridseries.errors import ValidationError
from gridseries.grid_model import Bus, Generator, NetworkSnapshot, Offer, load_offers


def _snap(gens):
    return NetworkSnapshot((Bus("1", "A", 400.0),), (), tuple(Generator(g, "1", f, 0.0, p) for g, f, p in gens),
                           (), ("A",))


def _offers(pid, fuel, maxes, prices=None, attrs=()):
    prices = prices or [30.0] * len(maxes)
    return [Offer(pid, h, fuel, pr, mx, 0.1 * mx, attrs) for h, (mx, pr) in enumerate(zip(maxes, prices))]


def _book(*offer_lists):
    offers = tuple(o for lst in offer_lists for o in lst)
    return OfferBook(offers, infer_participants(offers), {})


def test_capacity_is_max_bid():
    parts = infer_participants(_offers("P", "gas", [300, 500, 450]))
    assert parts["P"].p_max_MW == 500
    assert infer_participants(_offers("Q", "gas", [120]))["Q"].p_max_MW == 120


def test_conflicting_fuel_and_bad_price():
    with pytest.raises(ValidationError, match="conflicting fuels"):
        infer_participants(_offers("P", "gas", [1]) + [Offer("P", 1, "coal", 1, 1, 0)])
    with pytest.raises(ValidationError, match="non-finite"):
        infer_participants([Offer("P", 0, "gas", float("nan"), 1, 0)])


def test_nearest_capacity():
    book = _book(_offers("P380", "gas", [380]), _offers("P800", "gas", [800]))
    assert match(book.participants, _snap([("g", "gas", 400)])) == {"g": "P380"}


def test_identical_capacity_and_ties():
    book = _book(_offers("B", "gas", [500]), _offers("A", "gas", [300]), _offers("C", "gas", [700]))
    assert match(book.participants, _snap([("g", "gas", 500)])) == {"g": "B"}
    # 400 is 100 MW from both A and B; lexicographically smallest wins
    assert match(book.participants, _snap([("g", "gas", 400)])) == {"g": "A"}


def test_one_participant_many_generators():
    book = _book(_offers("N1", "nuclear", [900]))
    snap = _snap([(f"n{k}", "nuclear", 900 + 100 * k) for k in range(5)])
    assert set(match(book.participants, snap).values()) == {"N1"}


def test_capacity_filter():
    book = _book(_offers("P500", "gas", [500]), _offers("P200", "gas", [200]))
    snap = _snap([("small", "gas", 450), ("big", "gas", 600)])
    a = match(book.participants, snap, MatchPolicy(capacity_filter=True))
    assert a == {"small": "P200", "big": "P500"}
    with pytest.raises(ValidationError):
        match(book.participants, _snap([("tiny", "gas", 100)]), MatchPolicy(capacity_filter=True))


def test_substitution_is_explicit():
    book = _book(_offers("C", "coal", [600]))
    snap = _snap([("n", "nuclear", 900)])
    with pytest.raises(ValidationError, match="nuclear"):
        match(book.participants, snap)
    assert match(book.participants, snap, MatchPolicy({"nuclear": "coal"})) == {"n": "C"}


def test_offer_scaling_halves_quantities_keeps_prices():
    book = build_offer_book(_book(_offers("P", "gas", [500, 400], prices=[31.5, 47.0], attrs=(("min_up_h", "4"),))),
                            _snap([("g", "gas", 250)]))
    s = offer_series(book, _snap([("g", "gas", 250)]), range(2))["g"]
    np.testing.assert_allclose(s.p_max, [250, 200])
    np.testing.assert_allclose(s.p_min, [25, 20])
    np.testing.assert_array_equal(s.price, [31.5, 47.0])
    assert dict(s.attributes) == {"min_up_h": "4"}


def test_unit_ratio_copies_and_constant_price():
    snap = _snap([("g", "gas", 500)])
    book = build_offer_book(_book(_offers("P", "gas", [500, 300, 500], prices=[20.0] * 3)), snap)
    s = offer_series(book, snap, range(3))["g"]
    np.testing.assert_array_equal(s.p_max, [500, 300, 500])
    assert np.all(s.price == 20.0)


def test_horizon_gap():
    snap = _snap([("g", "gas", 500)])
    book = build_offer_book(_book(_offers("P", "gas", [500, 500])), snap)
    with pytest.raises(ValidationError, match="no offers for hours"):
        offer_series(book, snap, range(3))


def test_desk_invariants(desk_case, tmp_path):
    path = tmp_path / "offers.csv"
    from gridseries.grid_model import write_offers

    write_offers(desk_case.offers, path)
    snap = desk_case.snapshot
    dispatchable = [g.id for g in snap.generators if g.fuel not in ("wind", "solar")]
    policy = MatchPolicy({"nuclear": "coal"})
    book = build_offer_book(load_offers(path), snap, policy, generators=dispatchable)
    again = build_offer_book(load_offers(path), snap, policy, generators=dispatchable)
    assert book.assignment == again.assignment
    fuel = {g.id: g.fuel for g in snap.generators}
    pmax = {g.id: g.p_max_MW for g in snap.generators}
    for gid, pid in book.assignment.items():
        pf = book.participants[pid].fuel
        assert pf == fuel[gid] or policy.substitutes.get(fuel[gid]) == pf
    for gid, s in offer_series(book, snap, range(24)).items():
        assert np.all(s.p_max <= pmax[gid] + 1e-6)
