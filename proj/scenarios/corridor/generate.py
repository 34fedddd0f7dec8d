#!/usr/bin/env python3
"""Writes network.json for the bundled 5-intersection corridor.

Intersections 0..4 run west to east along a main street; every intersection
also has a north and a south approach. Phase counts are (5, 3, 2, 2, 2).
"""
import json
import sys
from pathlib import Path

N = 5


def build(step=5, period=120, main_heavy=1.0, main_light=0.4, side_heavy=0.6, side_light=0.1,
          main_sat=4, turn_sat=1, right_sat=2, side_sat=2, main_cap=60, side_cap=40,
          main_travel=4, side_travel=2, max_len=160):
    links, movements, demand, turns = [], [], [], []

    def link(name, cap, travel):
        links.append({"id": len(links), "name": name, "capacity": cap, "travel_steps": travel})
        return len(links) - 1

    eb = [link(f"eb{j}", main_cap, main_travel) for j in range(N)]  # eastbound into j
    wb = [link(f"wb{j}", main_cap, main_travel) for j in range(N)]  # westbound into j
    nb = [link(f"n{j}", side_cap, side_travel) for j in range(N)]  # from the north
    sb = [link(f"s{j}", side_cap, side_travel) for j in range(N)]  # from the south

    def east_of(j):
        return eb[j + 1] if j + 1 < N else None

    def west_of(j):
        return wb[j - 1] if j > 0 else None

    def move(frm, to, sat):
        movements.append({"id": len(movements), "from_link": frm, "to_link": to,
                          "saturation_flow": sat})
        return len(movements) - 1

    groups = []
    for j in range(N):
        g = {}
        g["eb_t"] = move(eb[j], east_of(j), main_sat)
        g["eb_l"] = move(eb[j], None, turn_sat)
        g["eb_r"] = move(eb[j], None, right_sat)
        g["wb_t"] = move(wb[j], west_of(j), main_sat)
        g["wb_l"] = move(wb[j], None, turn_sat)
        g["wb_r"] = move(wb[j], None, right_sat)
        g["n_t"] = move(nb[j], None, side_sat)
        g["n_l"] = move(nb[j], east_of(j), turn_sat)
        g["n_r"] = move(nb[j], west_of(j), turn_sat)
        g["s_t"] = move(sb[j], None, side_sat)
        g["s_l"] = move(sb[j], west_of(j), turn_sat)
        g["s_r"] = move(sb[j], east_of(j), turn_sat)
        groups.append(g)
        for l, (t, lft, r), split in ((eb[j], ("eb_t", "eb_l", "eb_r"), (0.8, 0.1, 0.1)),
                                      (wb[j], ("wb_t", "wb_l", "wb_r"), (0.8, 0.1, 0.1)),
                                      (nb[j], ("n_t", "n_l", "n_r"), (0.4, 0.3, 0.3)),
                                      (sb[j], ("s_t", "s_l", "s_r"), (0.4, 0.3, 0.3))):
            turns.append({"link": l, "movements": [[g[t], split[0]], [g[lft], split[1]],
                                                   [g[r], split[2]]]})

    def m(g, *keys):
        return [g[k] for k in keys]

    intersections = []
    for j, g in enumerate(groups):
        ew_all = m(g, "eb_t", "eb_l", "eb_r", "wb_t", "wb_l", "wb_r")
        ns_all = m(g, "n_t", "n_l", "n_r", "s_t", "s_l", "s_r")
        if j == 0:
            phases = [m(g, "eb_t", "eb_r", "wb_t", "wb_r"),
                      m(g, "eb_t", "eb_l", "eb_r"),
                      m(g, "wb_l"),
                      m(g, "n_t", "n_l", "n_r"),
                      m(g, "s_t", "s_l", "s_r")]
        elif j == 1:
            phases = [m(g, "eb_t", "eb_r", "wb_t", "wb_r"), m(g, "eb_l", "wb_l"), ns_all]
        else:
            phases = [ew_all, ns_all]
        intersections.append({"id": j, "phases": [
            {"min_len": 10, "max_len": max_len, "movements": p} for p in phases]})

    half = period // 2
    # Main street peaks in the first half of the period, side streets in the second.
    demand.append({"link": eb[0], "period_steps": period,
                   "profile": [[0, main_heavy], [half, main_light]]})
    demand.append({"link": wb[N - 1], "period_steps": period,
                   "profile": [[0, main_heavy * 0.8], [half, main_light]]})
    for j in range(N):
        demand.append({"link": nb[j], "period_steps": period,
                       "profile": [[0, side_light], [half, side_heavy]]})
        demand.append({"link": sb[j], "period_steps": period,
                       "profile": [[0, side_light * 0.5], [half, side_heavy * 0.7]]})

    return {"sampling_len": step, "horizon": 12, "seed": 7, "arrivals": "deterministic",
            "intersections": intersections, "links": links, "movements": movements,
            "demand": demand, "turn_ratios": turns}


if __name__ == "__main__":
    # optional: output path, then a JSON object of build() overrides
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).with_name("network.json")
    overrides = json.loads(sys.argv[2]) if len(sys.argv) > 2 else {}
    out.write_text(json.dumps(build(**overrides), indent=1) + "\n")
