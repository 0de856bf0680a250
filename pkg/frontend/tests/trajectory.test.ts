/** Golden round-trip with the backend schema and interpolation parity. */

import { readFileSync, readdirSync } from "node:fs";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import {
  TrajectoryJson,
  boxValid,
  emitTrajectory,
  interpolateBoxes,
  validateTrajectory,
} from "../src/trajectory.js";

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "..", "fixtures");

function fixtureNames(): string[] {
  return readdirSync(join(FIXTURES, "trajectories"))
    .filter((f) => f.endsWith(".json"))
    .map((f) => f.replace(/\.json$/, ""));
}

function loadTrajectory(name: string): TrajectoryJson {
  return JSON.parse(readFileSync(join(FIXTURES, "trajectories", `${name}.json`), "utf-8"));
}

function loadGolden(name: string): number[][] {
  return JSON.parse(readFileSync(join(FIXTURES, "interpolated", `${name}.json`), "utf-8"));
}

describe("golden fixtures", () => {
  it("every authored fixture validates against the wire schema", () => {
    for (const name of fixtureNames()) {
      const traj = loadTrajectory(name);
      expect(validateTrajectory(traj), name).toEqual([]);
    }
  });

  it("re-emitting a parsed fixture is lossless (round trip)", () => {
    for (const name of fixtureNames()) {
      const traj = loadTrajectory(name);
      const keyed = Object.entries(traj.boxes).map(([frame, arr]) => ({
        frame: Number(frame),
        box: { x1: arr[0], y1: arr[1], x2: arr[2], y2: arr[3] },
      }));
      const emitted = emitTrajectory(traj.length, keyed, traj.path);
      expect(emitted).toEqual(traj);
    }
  });

  it("preview interpolation matches the server within 1 px at 16x16", () => {
    for (const name of fixtureNames()) {
      const traj = loadTrajectory(name);
      const golden = loadGolden(name);
      const mine = interpolateBoxes(traj, traj.length);
      expect(mine.length).toBe(golden.length);
      for (let i = 0; i < mine.length; i++) {
        const got = [mine[i].x1, mine[i].y1, mine[i].x2, mine[i].y2];
        for (let c = 0; c < 4; c++) {
          expect(Math.abs(got[c] - golden[i][c]), `${name} frame ${i} coord ${c}`)
            .toBeLessThanOrEqual(1 / 16);
        }
      }
    }
  });
});

describe("validation", () => {
  it("requires boxes at both endpoints", () => {
    const traj: TrajectoryJson = { length: 4, boxes: { "2": [0.1, 0.1, 0.3, 0.3] } };
    expect(validateTrajectory(traj)).not.toEqual([]);
  });

  it("rejects degenerate boxes", () => {
    expect(boxValid({ x1: 0.5, y1: 0.1, x2: 0.5, y2: 0.4 })).toBe(false);
    const traj: TrajectoryJson = {
      length: 2,
      boxes: { "1": [0.5, 0.1, 0.5, 0.4], "2": [0.1, 0.1, 0.3, 0.3] },
    };
    expect(validateTrajectory(traj).some((e) => e.includes("degenerate"))).toBe(true);
  });

  it("rejects a path detached from the box centers", () => {
    const traj: TrajectoryJson = {
      length: 2,
      boxes: { "1": [0.1, 0.1, 0.3, 0.3], "2": [0.6, 0.6, 0.8, 0.8] },
      path: [[0.9, 0.9], [0.7, 0.7]],
    };
    expect(validateTrajectory(traj)).not.toEqual([]);
  });

  it("static trajectory previews a static box on every frame", () => {
    const traj: TrajectoryJson = {
      length: 6,
      boxes: { "1": [0.2, 0.2, 0.4, 0.4], "6": [0.2, 0.2, 0.4, 0.4] },
    };
    const boxes = interpolateBoxes(traj, 6);
    for (const b of boxes) {
      expect(b.x1).toBeCloseTo(0.2, 9);
      expect(b.y1).toBeCloseTo(0.2, 9);
      expect(b.x2).toBeCloseTo(0.4, 9);
      expect(b.y2).toBeCloseTo(0.4, 9);
    }
  });
});
