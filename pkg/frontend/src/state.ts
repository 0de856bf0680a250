/** Editor state and the submit-enable invariants. */

import { Box, Keyed, TrajectoryJson, boxValid, emitTrajectory, validateTrajectory } from "./trajectory.js";

export type Task = "insert" | "complete" | "edit" | "remove" | "brush";
export type Mode = "t2v" | "i2v" | "k2v" | "long";

export interface CameraDials {
  cx: number; // [-1, 1]
  cy: number; // [-1, 1]
  cz: number; // [0.5, 2]
}

export interface EditorState {
  task: Task;
  mode: Mode;
  length: number;
  firstBox: Box | null;
  lastBox: Box | null;
  midBoxes: Keyed[];
  path: [number, number][];
  camera: CameraDials | null;
  promptTokens: string[];
  maskFile: string | null;
  videoFile: string;
  checkpoint: string;
  firstFrameFile: string | null;
  modulationEnabled: boolean;
  lambda: number;
  tauFrac: number;
  seed: number;
}

export function initialState(): EditorState {
  return {
    task: "insert",
    mode: "t2v",
    length: 8,
    firstBox: null,
    lastBox: null,
    midBoxes: [],
    path: [],
    camera: null,
    promptTokens: [],
    maskFile: null,
    videoFile: "",
    checkpoint: "",
    firstFrameFile: null,
    modulationEnabled: false,
    lambda: 25,
    tauFrac: 0.95,
    seed: 0,
  };
}

export function clampCamera(dials: CameraDials): CameraDials {
  return {
    cx: Math.min(Math.max(dials.cx, -1), 1),
    cy: Math.min(Math.max(dials.cy, -1), 1),
    cz: Math.min(Math.max(dials.cz, 0.5), 2),
  };
}

/** Submission gate: boxes for box-driven tasks, a mask file for edit/remove. */
export function canSubmit(state: EditorState): { ok: boolean; reason?: string } {
  if (!state.videoFile) return { ok: false, reason: "video file required" };
  if (!state.checkpoint) return { ok: false, reason: "checkpoint required" };
  if (state.task === "insert" || state.task === "brush") {
    if (!state.firstBox || !state.lastBox) {
      return { ok: false, reason: "boxes at frames 1 and L required" };
    }
    if (!boxValid(state.firstBox) || !boxValid(state.lastBox)) {
      return { ok: false, reason: "degenerate box" };
    }
    if (state.promptTokens.length === 0) {
      return { ok: false, reason: "object words required" };
    }
  }
  if ((state.task === "edit" || state.task === "remove") && !state.maskFile) {
    return { ok: false, reason: "mask file required" };
  }
  if (state.mode === "i2v" && state.task !== "brush" && !state.firstFrameFile) {
    return { ok: false, reason: "i2v needs an inpainted first frame" };
  }
  return { ok: true };
}

export function authorTrajectory(state: EditorState): TrajectoryJson {
  if (!state.firstBox || !state.lastBox) throw new Error("boxes missing");
  const keyed: Keyed[] = [
    { frame: 1, box: state.firstBox },
    ...state.midBoxes,
    { frame: state.length, box: state.lastBox },
  ];
  const traj = emitTrajectory(state.length, keyed, state.path.length >= 2 ? state.path : undefined);
  const errors = validateTrajectory(traj);
  if (errors.length) throw new Error(errors.join("; "));
  return traj;
}

/** The JobSpec JSON the API accepts (trajectory inlined). */
export function buildSpec(state: EditorState): Record<string, unknown> {
  const spec: Record<string, unknown> = {
    task: state.task,
    mode: state.mode,
    video: state.videoFile,
    checkpoint: state.checkpoint,
    prompt: state.promptTokens,
    seed: state.seed,
  };
  if (state.task === "insert" || state.task === "brush") {
    spec.trajectory = authorTrajectory(state);
  }
  if (state.maskFile) spec.mask = state.maskFile;
  if (state.firstFrameFile) spec.first_frame = state.firstFrameFile;
  if (state.camera) {
    const c = clampCamera(state.camera);
    spec.camera = [c.cx, c.cy, c.cz];
  }
  if (state.modulationEnabled) {
    spec.modulation = {
      lambda: state.lambda,
      tau_frac: state.tauFrac,
      targets: ["encoder", "mid", "decoder"],
      normalization: "literal",
    };
  }
  if (state.task === "brush") spec.frames = state.length;
  return spec;
}
