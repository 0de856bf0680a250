/** Boot: wire vocab chips, camera dials, canvas, submit, and the job list. */

import { ApiClient, JobRecord } from "./api.js";
import { JobConsole, ConsoleView } from "./console.js";
import { TrajectoryCanvas } from "./editor.js";
import { EditorState, buildSpec, canSubmit, initialState } from "./state.js";

const state: EditorState = initialState();
const client = new ApiClient("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const view: ConsoleView = {
  setFieldError(field, message) {
    const slot = document.querySelector(`[data-field="${field}"]`);
    const box = el<HTMLDivElement>("errors");
    if (slot) slot.classList.add("field-error");
    const line = document.createElement("div");
    line.textContent = `${field}: ${message}`;
    box.appendChild(line);
  },
  clearFieldErrors() {
    el<HTMLDivElement>("errors").textContent = "";
    document.querySelectorAll(".field-error").forEach((n) => n.classList.remove("field-error"));
  },
  renderJob(rec: JobRecord) {
    const row = ensureJobRow(rec.id);
    const pct = rec.progress.total ? Math.round((100 * rec.progress.step) / rec.progress.total) : 0;
    row.querySelector(".job-status")!.textContent =
      rec.status === "running" ? `running ${pct}%` : rec.status + (rec.error ? `: ${rec.error}` : "");
  },
  renderThumbnails(id, urls) {
    const row = ensureJobRow(id);
    const strip = row.querySelector(".job-frames") as HTMLDivElement;
    strip.textContent = "";
    for (const url of urls) {
      const img = document.createElement("img");
      img.src = url;
      img.className = "thumb";
      strip.appendChild(img);
    }
  },
  loadSpecIntoEditor(spec) {
    if (typeof spec.seed === "number") state.seed = spec.seed + 1;
    if (Array.isArray(spec.prompt)) state.promptTokens = spec.prompt as string[];
    syncControls();
  },
};

const jobs = new JobConsole(client, view);

function ensureJobRow(id: string): HTMLDivElement {
  let row = document.getElementById(`job-${id}`) as HTMLDivElement | null;
  if (!row) {
    row = document.createElement("div");
    row.id = `job-${id}`;
    row.className = "job-row";
    row.innerHTML = `<span class="job-id">${id}</span>
      <span class="job-status">queued</span>
      <button class="resubmit">edit &amp; resubmit</button>
      <div class="job-frames"></div>`;
    row.querySelector(".resubmit")!.addEventListener("click", () => jobs.resubmitSetup(id));
    el<HTMLDivElement>("job-list").prepend(row);
  }
  return row;
}

function syncControls() {
  el<HTMLInputElement>("video-file").value = state.videoFile;
  el<HTMLInputElement>("checkpoint").value = state.checkpoint;
  el<HTMLInputElement>("seed").value = String(state.seed);
  el<HTMLSpanElement>("prompt-current").textContent = state.promptTokens.join(" ") || "(empty)";
  const gate = canSubmit(state);
  const btn = el<HTMLButtonElement>("submit");
  btn.disabled = !gate.ok;
  el<HTMLSpanElement>("submit-hint").textContent = gate.ok ? "" : gate.reason ?? "";
  canvas.render(Number(el<HTMLInputElement>("frame-slider").value));
}

const canvas = new TrajectoryCanvas(
  el<HTMLCanvasElement>("editor-canvas"),
  state,
  syncControls,
);

async function boot() {
  try {
    const vocab = await client.vocab();
    const chipBox = el<HTMLDivElement>("vocab-chips");
    for (const token of [...vocab.colors, ...vocab.shapes, "background"]) {
      const chip = document.createElement("button");
      chip.className = "chip";
      chip.textContent = token;
      chip.addEventListener("click", () => {
        const i = state.promptTokens.indexOf(token);
        if (i >= 0) state.promptTokens.splice(i, 1);
        else state.promptTokens.push(token);
        chip.classList.toggle("chip-on", state.promptTokens.includes(token));
        syncControls();
      });
      chipBox.appendChild(chip);
    }
  } catch {
    el<HTMLDivElement>("errors").textContent = "API unreachable; is `inpaint-lab serve` running?";
  }

  el<HTMLSelectElement>("task").addEventListener("change", (e) => {
    state.task = (e.target as HTMLSelectElement).value as EditorState["task"];
    syncControls();
  });
  el<HTMLSelectElement>("mode").addEventListener("change", (e) => {
    state.mode = (e.target as HTMLSelectElement).value as EditorState["mode"];
    syncControls();
  });
  for (const dial of ["cx", "cy", "cz"] as const) {
    el<HTMLInputElement>(`cam-${dial}`).addEventListener("input", (e) => {
      const value = Number((e.target as HTMLInputElement).value);
      state.camera = { cx: 0, cy: 0, cz: 1, ...(state.camera ?? {}), [dial]: value };
      el<HTMLSpanElement>(`cam-${dial}-val`).textContent = value.toFixed(2);
    });
  }
  el<HTMLInputElement>("video-file").addEventListener("input", (e) => {
    state.videoFile = (e.target as HTMLInputElement).value;
    syncControls();
  });
  el<HTMLInputElement>("checkpoint").addEventListener("input", (e) => {
    state.checkpoint = (e.target as HTMLInputElement).value;
    syncControls();
  });
  el<HTMLInputElement>("mask-file").addEventListener("input", (e) => {
    state.maskFile = (e.target as HTMLInputElement).value || null;
    syncControls();
  });
  el<HTMLInputElement>("seed").addEventListener("input", (e) => {
    state.seed = Number((e.target as HTMLInputElement).value) || 0;
  });
  el<HTMLInputElement>("modulation").addEventListener("change", (e) => {
    state.modulationEnabled = (e.target as HTMLInputElement).checked;
  });
  el<HTMLInputElement>("path-mode").addEventListener("change", (e) => {
    canvas.setPathMode((e.target as HTMLInputElement).checked);
  });
  el<HTMLButtonElement>("clear-boxes").addEventListener("click", () => canvas.clearBoxes());
  el<HTMLInputElement>("frame-slider").addEventListener("input", syncControls);
  el<HTMLButtonElement>("submit").addEventListener("click", async () => {
    try {
      await jobs.submit(buildSpec(state));
    } catch (err) {
      view.setFieldError("trajectory", String(err));
    }
  });
  await jobs.refreshList().catch(() => undefined);
  syncControls();
}

boot();
