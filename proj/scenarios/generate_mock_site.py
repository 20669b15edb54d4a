#!/usr/bin/env python3
# Copyright 2026 The sitecoord Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Writes mock_site.yaml: four vehicles, two merge-split and five intersection zones."""

import argparse
import math

STEP = 5.0


class Turtle:
    def __init__(self, x, y, heading_deg):
        self.x, self.y = x, y
        self.h = math.radians(heading_deg)
        self.points = [(x, y)]

    def straight(self, length):
        n = max(1, round(length / STEP))
        for i in range(1, n + 1):
            d = length * i / n
            self.points.append((self.x + d * math.cos(self.h), self.y + d * math.sin(self.h)))
        self.x, self.y = self.points[-1]
        return self

    def arc(self, radius, degrees):
        """Positive degrees turn left."""
        sweep = math.radians(degrees)
        side = 1.0 if sweep > 0 else -1.0
        cx = self.x - side * radius * math.sin(self.h)
        cy = self.y + side * radius * math.cos(self.h)
        n = max(2, math.ceil(abs(sweep) * radius / STEP))
        start = self.h - side * math.pi / 2
        for i in range(1, n + 1):
            a = start + sweep * i / n
            self.points.append((cx + radius * math.cos(a), cy + radius * math.sin(a)))
        self.x, self.y = self.points[-1]
        self.h += sweep
        return self


def paths(lead):
    red = (Turtle(270, -30 - lead["red"], 90).straight(lead["red"])
           .arc(30, -90).straight(120).arc(60, 90).straight(90).arc(60, -90).straight(460))
    blue = Turtle(-lead["blue"], 0, 0).straight(lead["blue"] + 900)
    green = (Turtle(620, 60 + lead["green"], -90).straight(lead["green"])
             .arc(60, 90).straight(100).arc(60, -90).straight(340))
    black = (Turtle(100, -100 + lead["black"], -90).straight(lead["black"])
             .arc(60, 90).straight(730).arc(60, 90).straight(400))
    return {"red": red, "blue": blue, "green": green, "black": black}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="mock_site.yaml")
    ap.add_argument("--red", type=float, default=220)
    ap.add_argument("--blue", type=float, default=300)
    ap.add_argument("--green", type=float, default=650)
    ap.add_argument("--black", type=float, default=490)
    args = ap.parse_args()
    lead = {"red": args.red, "blue": args.blue, "green": args.green, "black": args.black}
    with open(args.out, "w") as f:
        f.write("# Generated by generate_mock_site.py")
        f.write(f" --red {args.red:g} --blue {args.blue:g} --green {args.green:g}"
                f" --black {args.black:g}\n")
        f.write("grid: {N: 100}\n")
        f.write("vehicle_defaults:\n")
        f.write("  v_min: {value: 3.6, unit: km/h}\n")
        f.write("  v_max: {value: 90, unit: km/h}\n")
        f.write("  v_initial: {value: 50, unit: km/h}\n")
        f.write("  a_lon_max: 4\n  a_lat_max: 2\n")
        f.write("  weights: {P: 1, Q: 1, R: 10}\n")
        f.write("vehicles:\n")
        for name, t in paths(lead).items():
            f.write(f"  - id: {name}\n    waypoints:\n")
            for x, y in t.points:
                f.write(f"      - [{x:.3f}, {y:.3f}]\n")
        f.write("zones:\n  auto:\n")
        f.write("    intersection_margin: 5\n    merge_margin: 15\n")
        f.write("    lateral_threshold: 2\n    min_merge_length: 20\n")
        f.write("    time_headway: 0.5\n    offset: 0\n")


if __name__ == "__main__":
    main()
