/**
 * Box trajectories: the JSON schema the backend accepts, client-side
 * validation, and the same arc-length interpolation the server applies
 * (so the preview matches what a submitted job will rasterize).
 */

export interface Box {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export interface TrajectoryJson {
  length: number;
  boxes: Record<string, [number, number, number, number]>;
  path?: [number, number][];
}

export function boxValid(b: Box): boolean {
  return 0 <= b.x1 && b.x1 < b.x2 && b.x2 <= 1 && 0 <= b.y1 && b.y1 < b.y2 && b.y2 <= 1;
}

export function boxCenter(b: Box): [number, number] {
  return [(b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2];
}

export interface Keyed {
  frame: number; // 1-based
  box: Box;
}

export function validateTrajectory(traj: TrajectoryJson): string[] {
  const errors: string[] = [];
  if (!Number.isInteger(traj.length) || traj.length < 2) {
    errors.push("length must be an integer >= 2");
    return errors;
  }
  const frames = Object.keys(traj.boxes).map(Number).sort((a, b) => a - b);
  if (frames.length === 0 || frames[0] !== 1 || frames[frames.length - 1] !== traj.length) {
    errors.push("boxes at frame 1 and frame L are required");
  }
  for (const f of frames) {
    if (!Number.isInteger(f) || f < 1 || f > traj.length) {
      errors.push(`keyed frame ${f} outside [1, ${traj.length}]`);
    }
    const [x1, y1, x2, y2] = traj.boxes[String(f)];
    if (!boxValid({ x1, y1, x2, y2 })) {
      errors.push(`box at frame ${f} is degenerate`);
    }
  }
  if (traj.path) {
    if (traj.path.length < 2) {
      errors.push("path needs at least 2 points");
    } else if (frames.length && errors.length === 0) {
      const c0 = boxCenter(toBox(traj.boxes[String(1)]));
      const cL = boxCenter(toBox(traj.boxes[String(traj.length)]));
      const first = traj.path[0];
      const last = traj.path[traj.path.length - 1];
      if (Math.abs(first[0] - c0[0]) > 1e-6 || Math.abs(first[1] - c0[1]) > 1e-6) {
        errors.push("path must start at the first box center");
      }
      if (Math.abs(last[0] - cL[0]) > 1e-6 || Math.abs(last[1] - cL[1]) > 1e-6) {
        errors.push("path must end at the last box center");
      }
    }
  }
  return errors;
}

function toBox(arr: [number, number, number, number]): Box {
  return { x1: arr[0], y1: arr[1], x2: arr[2], y2: arr[3] };
}

function arclen(points: [number, number][]): number[] {
  const cum = [0];
  for (let i = 1; i < points.length; i++) {
    const dx = points[i][0] - points[i - 1][0];
    const dy = points[i][1] - points[i - 1][1];
    cum.push(cum[i - 1] + Math.hypot(dx, dy));
  }
  return cum;
}

function pointAtFraction(pts: [number, number][], cum: number[], frac: number): [number, number] {
  const total = cum[cum.length - 1];
  if (total <= 0) return [pts[0][0], pts[0][1]];
  const target = frac * total;
  let i = cum.findIndex((c) => c > target) - 1;
  if (i < 0) i = target >= total ? pts.length - 2 : 0;
  i = Math.min(Math.max(i, 0), pts.length - 2);
  const seg = cum[i + 1] - cum[i];
  const t = seg <= 0 ? 0 : (target - cum[i]) / seg;
  return [
    pts[i][0] * (1 - t) + pts[i + 1][0] * t,
    pts[i][1] * (1 - t) + pts[i + 1][1] * t,
  ];
}

function clampBox(cx: number, cy: number, w: number, h: number): Box {
  w = Math.min(w, 1);
  h = Math.min(h, 1);
  const x1 = Math.min(Math.max(cx - w / 2, 0), 1 - w);
  const y1 = Math.min(Math.max(cy - h / 2, 0), 1 - h);
  return { x1, y1, x2: x1 + w, y2: y1 + h };
}

/**
 * Per-frame boxes: centers sampled arc-length-uniformly along the path
 * (polyline through keyed centers when no explicit path); widths/heights
 * interpolate linearly in authored frame index between enclosing keys.
 */
export function interpolateBoxes(traj: TrajectoryJson, length: number): Box[] {
  const frames = Object.keys(traj.boxes).map(Number).sort((a, b) => a - b);
  const keyed: Keyed[] = frames.map((f) => ({ frame: f, box: toBox(traj.boxes[String(f)]) }));
  const centers: [number, number][] = traj.path
    ? traj.path.map((p) => [p[0], p[1]])
    : keyed.map((k) => boxCenter(k.box));
  const cum = arclen(centers);
  const out: Box[] = [];
  for (let i = 0; i < length; i++) {
    const frac = i / (length - 1);
    const [cx, cy] = pointAtFraction(centers, cum, frac);
    const fidx = 1 + frac * (traj.length - 1);
    let j = 0;
    while (j + 1 < frames.length - 1 && frames[j + 1] <= fidx) j++;
    const f0 = keyed[j];
    const f1 = keyed[j + 1];
    const span = f1.frame - f0.frame;
    const t = span === 0 ? 0 : Math.min(Math.max((fidx - f0.frame) / span, 0), 1);
    const w = (f0.box.x2 - f0.box.x1) * (1 - t) + (f1.box.x2 - f1.box.x1) * t;
    const h = (f0.box.y2 - f0.box.y1) * (1 - t) + (f1.box.y2 - f1.box.y1) * t;
    out.push(clampBox(cx, cy, w, h));
  }
  out[0] = keyed[0].box;
  out[length - 1] = keyed[keyed.length - 1].box;
  return out;
}

/** Serialize the editor's keyed boxes and optional path to the wire schema. */
export function emitTrajectory(length: number, keyed: Keyed[], path?: [number, number][]): TrajectoryJson {
  const boxes: TrajectoryJson["boxes"] = {};
  for (const k of keyed) {
    boxes[String(k.frame)] = [k.box.x1, k.box.y1, k.box.x2, k.box.y2];
  }
  const traj: TrajectoryJson = { length, boxes };
  if (path && path.length >= 2) traj.path = path;
  return traj;
}
