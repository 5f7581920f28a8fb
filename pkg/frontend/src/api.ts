/**
 * HTTP client for the exploration service.
 *
 * Every call returns both the parsed body and the raw-text slices of
 * each value (see rawjson.ts), so the UI can display exactly the bytes
 * the service produced.
 */

import { extractRawValues, RawValues } from "./rawjson.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ServiceResponse<T> {
  status: number;
  body: T;
  raw: RawValues;
  text: string;
}

export interface SessionView {
  session_id: string;
  category: string | null;
  sketch_pgm: string;
  code_norm: number;
  coopt: { initial_loss: number; final_loss: number; iterations: number };
  condition: { mode: string; norm: number; stats: unknown } | null;
  oracle_scores: Record<string, number> | null;
  history: Array<{ alpha: number; mode: string; direction_norm: number }>;
}

export interface TrajectoryCandidateView {
  alpha: number;
  code_norm: number;
  similarity: number | null;
  oracle_scores: Record<string, number> | null;
  sketch_pgm: string;
}

export interface TrajectoryView {
  candidates: TrajectoryCandidateView[];
  selected_alpha: number | null;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    public code: number,
    message: string,
    public detail: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch,
  ) {}

  private async call<T>(method: string, path: string, body?: unknown, contentType?: string): Promise<ServiceResponse<T>> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      if (body instanceof Uint8Array) {
        init.body = body as unknown as BodyInit;
        init.headers = { "Content-Type": contentType ?? "application/octet-stream" };
      } else {
        init.body = JSON.stringify(body);
        init.headers = { "Content-Type": "application/json" };
      }
    }
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    const text = await resp.text();
    const parsed = JSON.parse(text);
    if (resp.status >= 400) {
      throw new ServiceError(resp.status, parsed.code, parsed.message, parsed.detail);
    }
    return { status: resp.status, body: parsed as T, raw: extractRawValues(text), text };
  }

  health(): Promise<ServiceResponse<{ status: string; version: string }>> {
    return this.call("GET", "/health");
  }

  createSessionFromShape(shapeId: string): Promise<ServiceResponse<SessionView>> {
    return this.call("POST", "/sessions", { shape_id: shapeId });
  }

  createSessionFromSketch(pgm: Uint8Array): Promise<ServiceResponse<SessionView>> {
    return this.call("POST", "/sessions", pgm, "image/x-portable-graymap");
  }

  getSession(sessionId: string): Promise<ServiceResponse<SessionView>> {
    return this.call("GET", `/sessions/${sessionId}`);
  }

  setSketchCondition(sessionId: string, editedPgmBase64: string): Promise<ServiceResponse<unknown>> {
    return this.call("POST", `/sessions/${sessionId}/condition`, {
      mode: "sketch",
      edited_sketch: editedPgmBase64,
    });
  }

  setTextCondition(sessionId: string, from: string, to: string): Promise<ServiceResponse<unknown>> {
    return this.call("POST", `/sessions/${sessionId}/condition`, {
      mode: "text",
      caption_from: from,
      caption_to: to,
    });
  }

  setBinaryCondition(sessionId: string, attribute: string, sign: 1 | -1): Promise<ServiceResponse<unknown>> {
    return this.call("POST", `/sessions/${sessionId}/condition`, {
      mode: "binary",
      attribute,
      sign,
    });
  }

  getTrajectory(sessionId: string, alphas: number[]): Promise<ServiceResponse<TrajectoryView>> {
    return this.call("GET", `/sessions/${sessionId}/trajectory?alphas=${alphas.join(",")}`);
  }

  accept(sessionId: string, alpha: number): Promise<ServiceResponse<SessionView>> {
    return this.call("POST", `/sessions/${sessionId}/accept`, { alpha });
  }
}
