/**
 * Studio entry point: session loading, stage timeline, sketch editing with
 * brush/eraser/rectangle tools on an 8x nearest-neighbor canvas, and
 * apply-and-resume. Panels update only from server responses; the only
 * client-side image mutation is the sketch raster.
 */

import { ApiClient, ApiError, SessionResource } from "./api.js";
import { CanvasDoc, PointStroke, Tool } from "./canvas-doc.js";
import {
  countChanged, diffMask, pointerToPixel, sketchRaster, stagePanels,
  zoomedRgba,
} from "./studio.js";

const ZOOM = 8;
const SIZE = 32;

const api = new ApiClient();

interface State {
  sessionId: string | null;
  session: SessionResource | null;
  doc: CanvasDoc | null;
  baseRaster: Uint8Array | null; // server-side sketch at load time
  tool: Tool;
  beforeFinal: string | null; // object URL of the final image pre-apply
  drawing: PointStroke | null;
  rectStart: [number, number] | null;
}

const state: State = {
  sessionId: null,
  session: null,
  doc: null,
  baseRaster: null,
  tool: "brush",
  beforeFinal: null,
  drawing: null,
  rectStart: null,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setError(message: string | null): void {
  const banner = el<HTMLDivElement>("error-banner");
  banner.textContent = message ?? "";
  banner.style.display = message ? "block" : "none";
}

async function guard<T>(work: () => Promise<T>): Promise<T | null> {
  try {
    const result = await work();
    setError(null);
    return result;
  } catch (e) {
    setError(e instanceof ApiError ? e.message : `unexpected: ${String(e)}`);
    return null;
  }
}

function renderTimeline(): void {
  const holder = el<HTMLDivElement>("timeline");
  holder.innerHTML = "";
  if (!state.session || !state.sessionId) return;
  for (const panel of stagePanels(state.session)) {
    const card = document.createElement("div");
    card.className = `panel ${panel.state}`;
    const title = document.createElement("h3");
    title.textContent = `stage ${panel.stage}: ${panel.label}`;
    card.appendChild(title);
    if (panel.state === "done") {
      const img = document.createElement("img");
      img.width = SIZE * ZOOM;
      img.height = SIZE * ZOOM;
      img.style.imageRendering = "pixelated";
      img.src = api.outputPngUrl(state.sessionId, panel.stage)
        + `&_=${Date.now()}`;
      card.appendChild(img);
    } else {
      const btn = document.createElement("button");
      btn.textContent = "run";
      btn.onclick = () => void runStage(panel.stage);
      card.appendChild(btn);
    }
    holder.appendChild(card);
  }
}

function renderSketch(): void {
  const canvas = el<HTMLCanvasElement>("sketch-canvas");
  const ctx = canvas.getContext("2d");
  if (!ctx || !state.doc) return;
  const raster = state.doc.data;
  const highlight = state.baseRaster
    ? diffMask(raster, state.baseRaster) : undefined;
  const rgba = zoomedRgba(raster, SIZE, SIZE, ZOOM, highlight);
  const image = ctx.createImageData(SIZE * ZOOM, SIZE * ZOOM);
  image.data.set(rgba);
  ctx.putImageData(image, 0, 0);
  el<HTMLSpanElement>("dirty-count").textContent = highlight
    ? `${countChanged(highlight)} px changed` : "";
  el<HTMLButtonElement>("undo-btn").disabled = !state.doc.canUndo();
  el<HTMLButtonElement>("redo-btn").disabled = !state.doc.canRedo();
}

async function refreshSession(): Promise<void> {
  if (!state.sessionId) return;
  const session = await guard(() => api.getSession(state.sessionId!));
  if (!session) return;
  state.session = session;
  renderTimeline();
  if (session.status["1"] === "done") {
    const out = await guard(() => api.getOutputJson(state.sessionId!, 1));
    if (out) {
      state.baseRaster = sketchRaster(out);
      state.doc = new CanvasDoc(SIZE, SIZE, state.baseRaster);
      renderSketch();
    }
  }
}

async function runStage(stage: number): Promise<void> {
  if (!state.sessionId) return;
  await guard(() => api.runStage(state.sessionId!, stage));
  await refreshSession();
}

async function applyAndResume(): Promise<void> {
  if (!state.sessionId || !state.doc || !state.session) return;
  const stages = Object.keys(state.session.status).length;
  const finalDone = state.session.status[String(stages)] === "done";
  state.beforeFinal = finalDone
    ? api.outputPngUrl(state.sessionId, stages) + `&_=${Date.now()}` : null;
  const payload = state.doc.toPngBase64();
  const ok = await guard(async () => {
    await api.putOutput(state.sessionId!, 1, payload);
    return api.resume(state.sessionId!);
  });
  if (!ok) return;
  await refreshSession();
  if (state.beforeFinal) {
    el<HTMLImageElement>("before-img").src = state.beforeFinal;
    el<HTMLImageElement>("after-img").src =
      api.outputPngUrl(state.sessionId, stages) + `&_=${Date.now() + 1}`;
    el<HTMLDivElement>("diff-row").style.display = "flex";
  }
}

function bindTools(): void {
  for (const tool of ["brush", "eraser", "rect"] as Tool[]) {
    el<HTMLButtonElement>(`tool-${tool}`).onclick = () => {
      state.tool = tool;
      for (const other of ["brush", "eraser", "rect"]) {
        el(`tool-${other}`).classList.toggle("active", other === tool);
      }
    };
  }
  el<HTMLButtonElement>("undo-btn").onclick = () => {
    state.doc?.undo();
    renderSketch();
  };
  el<HTMLButtonElement>("redo-btn").onclick = () => {
    state.doc?.redo();
    renderSketch();
  };
  el<HTMLButtonElement>("apply-btn").onclick = () => void applyAndResume();

  const canvas = el<HTMLCanvasElement>("sketch-canvas");
  canvas.onpointerdown = (ev) => {
    if (!state.doc) return;
    const [x, y] = pointerToPixel(ev.offsetX, ev.offsetY, ZOOM);
    if (state.tool === "rect") {
      state.rectStart = [x, y];
      return;
    }
    state.drawing = { tool: state.tool, points: [[x, y]] };
    state.doc.applyStroke(state.drawing);
    renderSketch();
  };
  canvas.onpointermove = (ev) => {
    if (!state.doc || !state.drawing) return;
    const [x, y] = pointerToPixel(ev.offsetX, ev.offsetY, ZOOM);
    // extend the in-flight stroke: undo it, append, reapply, so the whole
    // drag stays one undo-stack entry and one stroke-log entry
    state.doc.undo();
    state.drawing.points.push([x, y]);
    state.doc.applyStroke(state.drawing);
    renderSketch();
  };
  canvas.onpointerup = (ev) => {
    if (!state.doc) return;
    if (state.tool === "rect" && state.rectStart) {
      const [x, y] = pointerToPixel(ev.offsetX, ev.offsetY, ZOOM);
      state.doc.applyStroke({
        tool: "rect",
        x0: state.rectStart[0], y0: state.rectStart[1], x1: x, y1: y,
      });
      state.rectStart = null;
      renderSketch();
    }
    state.drawing = null;
  };
}

function bindSessionControls(): void {
  el<HTMLButtonElement>("create-btn").onclick = async () => {
    const seed = parseInt(el<HTMLInputElement>("seed-input").value, 10);
    const created = await guard(() => api.createSession({ seed }));
    if (!created) return;
    state.sessionId = created.id;
    el<HTMLInputElement>("session-input").value = created.id;
    await refreshSession();
  };
  el<HTMLButtonElement>("load-btn").onclick = async () => {
    state.sessionId = el<HTMLInputElement>("session-input").value.trim();
    await refreshSession();
  };
}

export function start(): void {
  bindSessionControls();
  bindTools();
}

if (typeof document !== "undefined" && document.getElementById("timeline")) {
  start();
}
