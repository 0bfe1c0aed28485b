"""Random instance generators for property tests, oracle checks and batches."""

from __future__ import annotations

import random

from .net import Arc, FIFOViolation, TimeDependentNetwork, TravelTimeProfile


def random_profile(
    rng: random.Random,
    period: float = 3600.0,
    max_breakpoints: int = 4,
    tt_range: tuple[float, float] = (5.0, 300.0),
) -> TravelTimeProfile:
    """FIFO profile with up to ``max_breakpoints`` breakpoints (rejection sampled)."""
    while True:
        k = rng.randint(1, max_breakpoints)
        offsets = sorted(rng.sample(range(int(period)), k))
        bps = tuple((float(o), round(rng.uniform(*tt_range), 3)) for o in offsets)
        try:
            return TravelTimeProfile(bps, period)
        except FIFOViolation:
            continue


def random_network(
    rng: random.Random,
    n_nodes: int = 8,
    n_arcs: int = 16,
    period: float = 3600.0,
    reversible_share: float = 0.3,
) -> TimeDependentNetwork:
    """Random directed graph with distinct ordered node pairs per arc."""
    pairs = [(u, v) for u in range(n_nodes) for v in range(n_nodes) if u != v]
    chosen = rng.sample(pairs, min(n_arcs, len(pairs)))
    arcs = [
        Arc(
            id=i,
            tail=u,
            head=v,
            profile=random_profile(rng, period),
            length=float(rng.randint(50, 2000)),
            reversible=rng.random() < reversible_share,
        )
        for i, (u, v) in enumerate(chosen)
    ]
    coords = {n: (rng.uniform(0, 1000), rng.uniform(0, 1000)) for n in range(n_nodes)}
    return TimeDependentNetwork(coords, tuple(arcs))


def grid_network(
    rows: int,
    cols: int,
    rng: random.Random | None = None,
    spacing: float = 400.0,
    base_tt: float = 40.0,
    period: float = 86400.0,
) -> TimeDependentNetwork:
    """Bidirectional grid; with ``rng`` each arc gets a rush-hour style profile."""
    coords = {}
    for r in range(rows):
        for c in range(cols):
            coords[r * cols + c] = (c * spacing, r * spacing)
    arcs = []
    aid = 0
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            nbrs = []
            if c + 1 < cols:
                nbrs.append(u + 1)
            if r + 1 < rows:
                nbrs.append(u + cols)
            for v in nbrs:
                for tail, head in ((u, v), (v, u)):
                    if rng is None:
                        prof = TravelTimeProfile.constant(base_tt, period)
                    else:
                        peak = base_tt * rng.uniform(1.0, 3.0)
                        lo = base_tt * rng.uniform(0.8, 1.2)
                        prof = TravelTimeProfile(
                            ((0.0, lo), (period * 0.3, lo), (period * 0.35, peak), (period * 0.45, lo)),
                            period,
                        )
                    arcs.append(Arc(aid, tail, head, prof, spacing, reversible=True))
                    aid += 1
    return TimeDependentNetwork(coords, tuple(arcs))


def random_accp_instance(rng: random.Random, max_hospitals: int = 4, max_communities: int = 8):
    """Small covering instance with a threshold near the median travel time."""
    from .cover import Community, Hospital, travel_time_table

    net = random_network(rng, 10, 30)
    hs = [
        Hospital(f"H{k}", rng.randrange(10), 0)
        for k in range(rng.randint(1, max_hospitals))
    ]
    cs = [
        Community(f"C{k}", rng.randrange(10), rng.randint(1, 60))
        for k in range(rng.randint(1, max_communities))
    ]
    total = sum(c.population for c in cs)
    hs = [Hospital(h.id, h.location, rng.randint(0, max(1, total // 2))) for h in hs]
    instant = rng.uniform(0, 3600)
    times = sorted(t for t in travel_time_table(net, hs, cs, instant).values() if t < float("inf"))
    threshold = times[len(times) // 2] if times else 100.0
    return net, hs, cs, max(threshold, 1.0), instant


def random_connected_network(
    rng: random.Random, n_nodes: int = 8, n_extra: int = 8, period: float = 3600.0
) -> TimeDependentNetwork:
    """Strongly connected: a directed ring plus random chords."""
    pairs = [(k, (k + 1) % n_nodes) for k in range(n_nodes)]
    others = [(u, v) for u in range(n_nodes) for v in range(n_nodes) if u != v and (u, v) not in pairs]
    pairs += rng.sample(others, min(n_extra, len(others)))
    arcs = [
        Arc(i, u, v, random_profile(rng, period, tt_range=(20.0, 400.0)), float(rng.randint(100, 3000)),
            reversible=rng.random() < 0.3)
        for i, (u, v) in enumerate(pairs)
    ]
    coords = {n: (rng.uniform(0, 1000), rng.uniform(0, 1000)) for n in range(n_nodes)}
    return TimeDependentNetwork(coords, tuple(arcs))


def random_dispatch_instance(
    rng: random.Random,
    n_ambulances: int | None = None,
    n_patients: int | None = None,
    n_nodes: int = 8,
):
    """Hospitals with fleets and patients on a strongly connected network."""
    from .cover import Hospital
    from .dispatch import Ambulance, Patient

    m = n_ambulances if n_ambulances is not None else rng.randint(1, 3)
    n = n_patients if n_patients is not None else rng.randint(0, 6)
    net = random_connected_network(rng, n_nodes, n_nodes)
    n_h = rng.randint(1, min(3, m))
    hospitals = [Hospital(f"H{k}", rng.randrange(n_nodes), 0) for k in range(n_h)]
    ambulances = [Ambulance(f"A{k:02d}", hospitals[k % n_h].id) for k in range(m)]
    t0 = rng.uniform(0, 3600)
    patients = [
        Patient(f"P{k:02d}", rng.randrange(n_nodes), rng.choice(["slight", "serious"]),
                round(t0 - rng.uniform(0, 600), 3) if t0 > 600 else 0.0)
        for k in range(n)
    ]
    return net, hospitals, ambulances, patients, t0


def random_ebpd_instance(
    rng: random.Random,
    max_buses: int = 2,
    max_pickups: int = 3,
    max_shelters: int = 2,
    n_nodes: int = 8,
):
    """Bus evacuation instance; demand stays within about two bus loads."""
    from .busevac import BusDepot, PickupPoint, Shelter

    net = random_connected_network(rng, n_nodes, n_nodes)
    n_buses = rng.randint(1, max_buses)
    n_depots = rng.randint(1, n_buses)
    counts = [1] * n_depots
    for _ in range(n_buses - n_depots):
        counts[rng.randrange(n_depots)] += 1
    depots = [
        BusDepot(f"D{k}", rng.randrange(n_nodes), counts[k], rng.randint(10, 40))
        for k in range(n_depots)
    ]
    cap = max(d.bus_capacity for d in depots)
    budget = 2 * cap
    pickups = []
    for k in range(rng.randint(1, max_pickups)):
        demand = rng.randint(0, max(0, budget))
        budget -= demand
        pickups.append(PickupPoint(f"P{k}", rng.randrange(n_nodes), demand, rng.randint(max(1, cap // 2), cap)))
    total = sum(p.demand for p in pickups)
    shelters = [
        Shelter(f"S{k}", rng.randrange(n_nodes), rng.randint(0, max(1, total)))
        for k in range(rng.randint(1, max_shelters))
    ]
    t0 = round(rng.uniform(0, 3600), 3)
    deadline = t0 + rng.uniform(900, 3600)
    return net, depots, pickups, shelters, deadline, t0
