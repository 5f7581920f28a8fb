/**
 * Pixel sketch editor model: a byte grid with draw/erase tools and an
 * undo/redo stack of full snapshots (64x64 bytes are cheap).
 *
 * Works directly on the PGM byte values so an export after no edits is
 * the downloaded sketch, bit for bit.
 */

import { Bitmap } from "./pgm.js";

export class SketchEditor {
  private current: Uint8Array;
  private undoStack: Uint8Array[] = [];
  private redoStack: Uint8Array[] = [];

  constructor(
    public readonly width: number,
    initial: Uint8Array,
  ) {
    if (initial.length !== width * width) {
      throw new Error(`expected ${width * width} bytes, got ${initial.length}`);
    }
    this.current = initial.slice();
  }

  static fromBitmap(bitmap: Bitmap): SketchEditor {
    if (bitmap.width !== bitmap.height) throw new Error("sketch must be square");
    return new SketchEditor(bitmap.width, bitmap.pixels);
  }

  pixels(): Uint8Array {
    return this.current.slice();
  }

  toBitmap(): Bitmap {
    return { width: this.width, height: this.width, pixels: this.pixels() };
  }

  private snapshot(): void {
    this.undoStack.push(this.current.slice());
    this.redoStack.length = 0;
  }

  /** zero every pixel in the rectangle (x, y, w, h) */
  eraseRect(x: number, y: number, w: number, h: number): void {
    this.checkRect(x, y, w, h);
    this.snapshot();
    for (let row = y; row < y + h; row++) {
      this.current.fill(0, row * this.width + x, row * this.width + x + w);
    }
  }

  /** 1-pixel-wide stroke from (x0,y0) to (x1,y1), value 255 */
  drawSegment(x0: number, y0: number, x1: number, y1: number): void {
    for (const [x, y] of [[x0, y0], [x1, y1]]) {
      if (x < 0 || y < 0 || x >= this.width || y >= this.width) {
        throw new Error("segment endpoint out of bounds");
      }
    }
    this.snapshot();
    let [x, y] = [x0, y0];
    const dx = Math.abs(x1 - x0);
    const dy = -Math.abs(y1 - y0);
    const sx = x0 < x1 ? 1 : -1;
    const sy = y0 < y1 ? 1 : -1;
    let err = dx + dy;
    for (;;) {
      this.current[y * this.width + x] = 255;
      if (x === x1 && y === y1) break;
      const e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y += sy;
      }
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
    this.redoStack.push(this.current);
    this.current = prev;
    return true;
  }

  redo(): boolean {
    const next = this.redoStack.pop();
    if (!next) return false;
    this.undoStack.push(this.current);
    this.current = next;
    return true;
  }

  private checkRect(x: number, y: number, w: number, h: number): void {
    if (w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > this.width || y + h > this.width) {
      throw new Error("rectangle out of bounds");
    }
  }
}
