/** Canvas editor: draw first/last boxes and a center path, preview the
 * interpolated sequence. Geometry helpers are pure; only bind() touches DOM. */

import { Box, TrajectoryJson, interpolateBoxes } from "./trajectory.js";
import { EditorState } from "./state.js";

export interface DragState {
  startX: number;
  startY: number;
  endX: number;
  endY: number;
}

/** Normalized box from a drag gesture on a canvas of the given size. */
export function dragToBox(drag: DragState, width: number, height: number): Box {
  const x1 = Math.min(drag.startX, drag.endX) / width;
  const x2 = Math.max(drag.startX, drag.endX) / width;
  const y1 = Math.min(drag.startY, drag.endY) / height;
  const y2 = Math.max(drag.startY, drag.endY) / height;
  return {
    x1: Math.max(0, x1),
    y1: Math.max(0, y1),
    x2: Math.min(1, x2),
    y2: Math.min(1, y2),
  };
}

export function previewBoxes(traj: TrajectoryJson, frame: number): Box {
  const boxes = interpolateBoxes(traj, traj.length);
  return boxes[Math.min(Math.max(frame, 0), boxes.length - 1)];
}

const COLORS = { first: "#2f9e44", last: "#e8590c", mid: "#1971c2", path: "#9c36b5" };

export class TrajectoryCanvas {
  private drag: DragState | null = null;
  private pathMode = false;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly state: EditorState,
    private readonly onChange: () => void,
  ) {
    canvas.addEventListener("mousedown", (e) => this.onDown(e));
    canvas.addEventListener("mousemove", (e) => this.onMove(e));
    canvas.addEventListener("mouseup", (e) => this.onUp(e));
  }

  setPathMode(enabled: boolean) {
    this.pathMode = enabled;
  }

  private pos(e: MouseEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    return [e.clientX - rect.left, e.clientY - rect.top];
  }

  private onDown(e: MouseEvent) {
    const [x, y] = this.pos(e);
    if (this.pathMode) {
      this.state.path.push([x / this.canvas.width, y / this.canvas.height]);
      this.onChange();
      return;
    }
    this.drag = { startX: x, startY: y, endX: x, endY: y };
  }

  private onMove(e: MouseEvent) {
    if (!this.drag) return;
    const [x, y] = this.pos(e);
    this.drag.endX = x;
    this.drag.endY = y;
    this.render();
  }

  private onUp(e: MouseEvent) {
    if (!this.drag) return;
    const [x, y] = this.pos(e);
    this.drag.endX = x;
    this.drag.endY = y;
    const box = dragToBox(this.drag, this.canvas.width, this.canvas.height);
    this.drag = null;
    if ((box.x2 - box.x1) * (box.y2 - box.y1) < 1e-4) {
      this.onChange(); // degenerate: surfaced by canSubmit validation
      return;
    }
    if (!this.state.firstBox) {
      this.state.firstBox = box;
    } else {
      this.state.lastBox = box;
    }
    this.onChange();
  }

  clearBoxes() {
    this.state.firstBox = null;
    this.state.lastBox = null;
    this.state.path = [];
    this.onChange();
  }

  render(previewFrame?: number) {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width: w, height: h } = this.canvas;
    ctx.clearRect(0, 0, w, h);
    ctx.strokeStyle = "#495057";
    ctx.strokeRect(0.5, 0.5, w - 1, h - 1);
    const drawBox = (box: Box, color: string, dashed = false) => {
      ctx.strokeStyle = color;
      ctx.setLineDash(dashed ? [4, 3] : []);
      ctx.strokeRect(box.x1 * w, box.y1 * h, (box.x2 - box.x1) * w, (box.y2 - box.y1) * h);
      ctx.setLineDash([]);
    };
    if (this.state.path.length >= 2) {
      ctx.strokeStyle = COLORS.path;
      ctx.beginPath();
      ctx.moveTo(this.state.path[0][0] * w, this.state.path[0][1] * h);
      for (const [px, py] of this.state.path.slice(1)) ctx.lineTo(px * w, py * h);
      ctx.stroke();
    }
    if (this.state.firstBox) drawBox(this.state.firstBox, COLORS.first);
    if (this.state.lastBox) drawBox(this.state.lastBox, COLORS.last);
    if (this.drag) {
      drawBox(dragToBox(this.drag, w, h), COLORS.mid, true);
    }
    if (previewFrame !== undefined && this.state.firstBox && this.state.lastBox) {
      try {
        const traj = {
          length: this.state.length,
          boxes: {
            "1": boxArr(this.state.firstBox),
            [String(this.state.length)]: boxArr(this.state.lastBox),
          },
          path: this.state.path.length >= 2 ? this.state.path : undefined,
        } as TrajectoryJson;
        drawBox(previewBoxes(traj, previewFrame), COLORS.mid, true);
      } catch {
        // invalid intermediate state: no preview
      }
    }
  }
}

function boxArr(b: Box): [number, number, number, number] {
  return [b.x1, b.y1, b.x2, b.y2];
}
