/** Pure view-model helpers for the studio, kept DOM-free for testing. */

import type { OutputJson, SessionResource } from "./api.js";

export interface StagePanel {
  stage: number;
  label: string;
  state: "done" | "pending";
  editable: boolean; // only the stage-1 sketch is paintable
}

const LABELS_2 = ["sketch", "image"];
const LABELS_3 = ["sketch", "palette", "image"];

/** Stage timeline: the palette panel appears only in 3-stage sessions. */
export function stagePanels(session: SessionResource): StagePanel[] {
  const n = Object.keys(session.status).length;
  const labels = n === 3 ? LABELS_3 : LABELS_2;
  return labels.map((label, i) => ({
    stage: i + 1,
    label,
    state: session.status[String(i + 1)],
    editable: i === 0,
  }));
}

/** Binary raster from a stage-1 JSON output (shape [h, w, 1], values 0/1). */
export function sketchRaster(out: OutputJson): Uint8Array {
  const [h, w, c] = out.shape;
  if (c !== 1) throw new Error(`sketch output must be 1-channel, got ${c}`);
  const raster = new Uint8Array(h * w);
  for (let i = 0; i < h * w; i++) {
    const v = out.data[i];
    if (v !== 0 && v !== 1) throw new Error("sketch output is not binary");
    raster[i] = v;
  }
  return raster;
}

/** Per-pixel changed mask between two equally-sized rasters. */
export function diffMask(a: Uint8Array, b: Uint8Array): Uint8Array {
  if (a.length !== b.length) throw new Error("size mismatch");
  const mask = new Uint8Array(a.length);
  for (let i = 0; i < a.length; i++) mask[i] = a[i] === b[i] ? 0 : 1;
  return mask;
}

export function countChanged(mask: Uint8Array): number {
  let n = 0;
  for (const v of mask) n += v;
  return n;
}

/** RGBA pixels for a zoomed nearest-neighbor rendering of a raster. */
export function zoomedRgba(
  raster: Uint8Array, width: number, height: number, zoom: number,
  highlight?: Uint8Array,
): Uint8ClampedArray {
  const out = new Uint8ClampedArray(width * zoom * height * zoom * 4);
  for (let y = 0; y < height * zoom; y++) {
    const sy = Math.floor(y / zoom);
    for (let x = 0; x < width * zoom; x++) {
      const sx = Math.floor(x / zoom);
      const i = sy * width + sx;
      const v = raster[i] ? 255 : 0;
      const o = (y * width * zoom + x) * 4;
      if (highlight && highlight[i]) {
        out[o] = 255;
        out[o + 1] = v ? 160 : 60;
        out[o + 2] = 60;
      } else {
        out[o] = out[o + 1] = out[o + 2] = v;
      }
      out[o + 3] = 255;
    }
  }
  return out;
}

/** Canvas pixel coordinates for a pointer event position at a zoom level. */
export function pointerToPixel(
  offsetX: number, offsetY: number, zoom: number,
): [number, number] {
  return [Math.floor(offsetX / zoom), Math.floor(offsetY / zoom)];
}
