/**
 * Client-side mirror of the stage-1 sketch: a binary raster plus an undo
 * stack of strokes. All edits quantize to {0,1}; out-of-canvas stroke
 * coordinates are clipped. The stroke log is the replayable source of
 * truth for the PUT payload.
 */

import { encodeGrayPng, toBase64 } from "./png.js";

export type Tool = "brush" | "eraser" | "rect";

export interface PointStroke {
  tool: "brush" | "eraser";
  points: Array<[number, number]>; // [x, y]
}

export interface RectStroke {
  tool: "rect"; // rectangle cutout: clears the region to black
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export type Stroke = PointStroke | RectStroke;

export class CanvasDoc {
  readonly width: number;
  readonly height: number;
  private raster: Uint8Array;
  private readonly base: Uint8Array;
  private undoStack: Uint8Array[] = [];
  private redoStack: Uint8Array[] = [];
  readonly strokeLog: Stroke[] = [];

  constructor(width: number, height: number, initial?: Uint8Array) {
    this.width = width;
    this.height = height;
    if (initial) {
      if (initial.length !== width * height) {
        throw new Error("initial raster has wrong size");
      }
      for (const v of initial) {
        if (v !== 0 && v !== 1) throw new Error("raster must be binary");
      }
      this.raster = Uint8Array.from(initial);
    } else {
      this.raster = new Uint8Array(width * height);
    }
    this.base = Uint8Array.from(this.raster);
  }

  get data(): Uint8Array {
    return Uint8Array.from(this.raster);
  }

  get dirty(): boolean {
    return !bytesEqual(this.raster, this.base);
  }

  applyStroke(stroke: Stroke): void {
    this.undoStack.push(Uint8Array.from(this.raster));
    this.redoStack = [];
    this.strokeLog.push(stroke);
    if (stroke.tool === "rect") {
      const x0 = clamp(Math.min(stroke.x0, stroke.x1), 0, this.width - 1);
      const x1 = clamp(Math.max(stroke.x0, stroke.x1), 0, this.width - 1);
      const y0 = clamp(Math.min(stroke.y0, stroke.y1), 0, this.height - 1);
      const y1 = clamp(Math.max(stroke.y0, stroke.y1), 0, this.height - 1);
      for (let y = y0; y <= y1; y++) {
        for (let x = x0; x <= x1; x++) {
          this.raster[y * this.width + x] = 0;
        }
      }
      return;
    }
    const value = stroke.tool === "brush" ? 1 : 0;
    for (const [x, y] of stroke.points) {
      const xi = Math.floor(x);
      const yi = Math.floor(y);
      if (xi < 0 || yi < 0 || xi >= this.width || yi >= this.height) {
        continue; // clipped
      }
      this.raster[yi * this.width + xi] = value;
    }
  }

  canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  canRedo(): boolean {
    return this.redoStack.length > 0;
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.redoStack.push(this.raster);
    this.raster = prev;
    this.strokeLog.pop();
    return true;
  }

  redo(): boolean {
    const next = this.redoStack.pop();
    if (!next) return false;
    this.undoStack.push(this.raster);
    this.raster = next;
    return true;
  }

  /** Deterministic PUT payload for the current raster. */
  toPngBase64(): string {
    return toBase64(encodeGrayPng(this.raster, this.width, this.height));
  }
}

/** Rebuild a raster by replaying a stroke log over an initial raster. */
export function replayStrokes(
  width: number, height: number, initial: Uint8Array, strokes: Stroke[],
): CanvasDoc {
  const doc = new CanvasDoc(width, height, initial);
  for (const s of strokes) doc.applyStroke(s);
  return doc;
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.max(lo, Math.min(hi, Math.floor(v)));
}

function bytesEqual(a: Uint8Array, b: Uint8Array): boolean {
  if (a.length !== b.length) return false;
  for (let i = 0; i < a.length; i++) {
    if (a[i] !== b[i]) return false;
  }
  return true;
}
