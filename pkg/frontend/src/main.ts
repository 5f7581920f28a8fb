/**
 * Page wiring: canvas sketch editor, condition forms, alpha slider,
 * candidate strip, history. All numbers on screen are raw response
 * slices (see controller.ts); this file only moves them into the DOM.
 */

import { ApiClient } from "./api.js";
import { SessionController } from "./controller.js";
import { SketchEditor } from "./editor.js";
import { base64ToBytes, bytesToBase64, decodePgm, encodePgm } from "./pgm.js";

const SKETCH_SIZE = 64;
const SCALE = 4;
const ALPHA_GRID = Array.from({ length: 7 }, (_, i) => i * 0.5);

const api = new ApiClient("");
const controller = new SessionController(api);
let editor: SketchEditor | null = null;
let tool: "draw" | "erase" = "draw";
let dragStart: [number, number] | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function paintBitmap(canvas: HTMLCanvasElement, pixels: Uint8Array): void {
  const ctx = canvas.getContext("2d")!;
  const img = ctx.createImageData(SKETCH_SIZE, SKETCH_SIZE);
  for (let i = 0; i < pixels.length; i++) {
    const v = 255 - pixels[i]; // strokes dark on a white background
    img.data[i * 4] = v;
    img.data[i * 4 + 1] = v;
    img.data[i * 4 + 2] = v;
    img.data[i * 4 + 3] = 255;
  }
  const off = new OffscreenCanvas(SKETCH_SIZE, SKETCH_SIZE);
  off.getContext("2d")!.putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function canvasPixel(canvas: HTMLCanvasElement, ev: MouseEvent): [number, number] {
  const rect = canvas.getBoundingClientRect();
  const x = Math.floor(((ev.clientX - rect.left) / rect.width) * SKETCH_SIZE);
  const y = Math.floor(((ev.clientY - rect.top) / rect.height) * SKETCH_SIZE);
  return [Math.max(0, Math.min(SKETCH_SIZE - 1, x)), Math.max(0, Math.min(SKETCH_SIZE - 1, y))];
}

function render(): void {
  const s = controller.state;
  el<HTMLDivElement>("status").textContent = s.pendingRequests > 0 ? "working..." : "idle";
  el<HTMLDivElement>("error").textContent = s.lastError ?? "";

  if (s.session) {
    el<HTMLDivElement>("session-line").textContent =
      `session ${s.session.session_id}` +
      (s.session.category ? ` (${s.session.category})` : "") +
      ` - refinement ${s.sessionRaw?.get("coopt/initial_loss") ?? ""} -> ${s.sessionRaw?.get("coopt/final_loss") ?? ""}`;
    const history = el<HTMLUListElement>("history");
    history.innerHTML = "";
    for (const h of s.session.history) {
      const li = document.createElement("li");
      li.textContent = `${h.mode} step alpha=${h.alpha}`;
      history.appendChild(li);
    }
  }

  const strip = el<HTMLDivElement>("candidates");
  strip.innerHTML = "";
  for (const cand of s.candidates) {
    const cell = document.createElement("div");
    cell.className = "candidate" + (cand.selected ? " selected" : "");
    const canvas = document.createElement("canvas");
    canvas.width = canvas.height = SKETCH_SIZE * 2;
    paintBitmap(canvas, decodePgm(base64ToBytes(cand.sketchPgmBase64)).pixels);
    cell.appendChild(canvas);
    const label = document.createElement("div");
    label.textContent =
      `alpha=${cand.display.alpha ?? ""}` +
      (cand.display.similarity ? ` sim=${cand.display.similarity}` : "");
    cell.appendChild(label);
    const scores = document.createElement("div");
    scores.className = "scores";
    scores.textContent = Object.entries(cand.oracleDisplay)
      .map(([k, v]) => `${k}=${v}`)
      .join(" ");
    cell.appendChild(scores);
    const pick = document.createElement("button");
    pick.textContent = "accept";
    pick.onclick = () => {
      void controller.accept(cand.alpha).then(refreshEditorFromSession).catch(() => undefined);
    };
    cell.appendChild(pick);
    strip.appendChild(cell);
  }
}

function refreshEditorFromSession(): void {
  const s = controller.state.session;
  if (!s) return;
  const bitmap = decodePgm(base64ToBytes(s.sketch_pgm));
  editor = SketchEditor.fromBitmap(bitmap);
  paintEditor();
}

function paintEditor(): void {
  if (!editor) return;
  paintBitmap(el<HTMLCanvasElement>("sketch"), editor.pixels());
}

function wireEditor(): void {
  const canvas = el<HTMLCanvasElement>("sketch");
  canvas.width = canvas.height = SKETCH_SIZE * SCALE;
  canvas.addEventListener("mousedown", (ev) => {
    dragStart = canvasPixel(canvas, ev);
  });
  canvas.addEventListener("mouseup", (ev) => {
    if (!editor || !dragStart) return;
    const [x0, y0] = dragStart;
    const [x1, y1] = canvasPixel(canvas, ev);
    dragStart = null;
    if (tool === "draw") {
      editor.drawSegment(x0, y0, x1, y1);
    } else {
      const x = Math.min(x0, x1);
      const y = Math.min(y0, y1);
      editor.eraseRect(x, y, Math.abs(x1 - x0) + 1, Math.abs(y1 - y0) + 1);
    }
    paintEditor();
  });
  el<HTMLButtonElement>("tool-draw").onclick = () => (tool = "draw");
  el<HTMLButtonElement>("tool-erase").onclick = () => (tool = "erase");
  el<HTMLButtonElement>("undo").onclick = () => {
    editor?.undo();
    paintEditor();
  };
  el<HTMLButtonElement>("redo").onclick = () => {
    editor?.redo();
    paintEditor();
  };
}

function wireForms(): void {
  el<HTMLButtonElement>("create").onclick = () => {
    const shapeId = el<HTMLInputElement>("shape-id").value.trim();
    void controller
      .createFromShape(shapeId)
      .then(() => {
        history.replaceState(null, "", `#${controller.state.session?.session_id}`);
        refreshEditorFromSession();
      })
      .catch(() => undefined);
  };

  el<HTMLButtonElement>("condition-sketch").onclick = () => {
    if (!editor) return;
    const pgm = encodePgm(editor.toBitmap());
    void controller.setSketchCondition(bytesToBase64(pgm)).then(scrubAll).catch(() => undefined);
  };

  el<HTMLButtonElement>("condition-text").onclick = () => {
    const from = el<HTMLInputElement>("caption-from").value.trim();
    const to = el<HTMLInputElement>("caption-to").value.trim();
    void controller.setTextCondition(from, to).then(scrubAll).catch(() => undefined);
  };

  el<HTMLButtonElement>("condition-binary").onclick = () => {
    const attr = el<HTMLInputElement>("attribute").value.trim();
    void controller.setBinaryCondition(attr, 1).then(scrubAll).catch(() => undefined);
  };

  const slider = el<HTMLInputElement>("alpha");
  slider.oninput = () => {
    const alpha = Number(slider.value);
    el<HTMLSpanElement>("alpha-value").textContent = alpha.toFixed(1);
    const cand = controller.nearestCandidate(alpha);
    if (cand) {
      paintBitmap(
        el<HTMLCanvasElement>("preview"),
        decodePgm(base64ToBytes(cand.sketchPgmBase64)).pixels,
      );
    }
  };
}

function scrubAll(): Promise<void> {
  return controller.scrub(ALPHA_GRID).catch(() => undefined) as Promise<void>;
}

function boot(): void {
  wireEditor();
  wireForms();
  controller.onChange(render);
  el<HTMLCanvasElement>("preview").width = SKETCH_SIZE * SCALE;
  el<HTMLCanvasElement>("preview").height = SKETCH_SIZE * SCALE;
  const fromHash = location.hash.slice(1);
  if (fromHash) {
    void controller.restore(fromHash).then(refreshEditorFromSession).catch(() => undefined);
  }
}

boot();
