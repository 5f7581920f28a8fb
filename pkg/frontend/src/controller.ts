/**
 * Session controller: the single mutable view-model behind the page.
 *
 * All state is derived from service responses; the controller never
 * computes a score itself. Display strings for numbers come from the
 * raw response slices so they are byte-identical to what the service
 * sent. Trajectory scrubbing keeps at most one request in flight and
 * remembers only the latest requested step size (trailing debounce).
 */

import { ApiClient, SessionView, TrajectoryView } from "./api.js";
import { RawValues } from "./rawjson.js";

export interface CandidateDisplay {
  alpha: number;
  /** raw response slices, keyed by field name */
  display: Record<string, string>;
  oracleDisplay: Record<string, string>;
  sketchPgmBase64: string;
  selected: boolean;
}

export interface ControllerState {
  session: SessionView | null;
  sessionRaw: RawValues | null;
  candidates: CandidateDisplay[];
  selectedAlpha: number | null;
  conditionSet: boolean;
  lastError: string | null;
  pendingRequests: number;
}

export class SessionController {
  state: ControllerState = {
    session: null,
    sessionRaw: null,
    candidates: [],
    selectedAlpha: null,
    conditionSet: false,
    lastError: null,
    pendingRequests: 0,
  };

  private scrubInFlight = false;
  private scrubQueued: number[] | null = null;
  private listeners: Array<(s: ControllerState) => void> = [];

  constructor(private api: ApiClient) {}

  onChange(listener: (s: ControllerState) => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const l of this.listeners) l(this.state);
  }

  private applySession(view: SessionView, raw: RawValues): void {
    this.state.session = view;
    this.state.sessionRaw = raw;
    this.state.conditionSet = view.condition !== null;
    this.state.candidates = [];
    this.state.selectedAlpha = null;
    this.emit();
  }

  async createFromShape(shapeId: string): Promise<void> {
    await this.track(async () => {
      const resp = await this.api.createSessionFromShape(shapeId);
      this.applySession(resp.body, resp.raw);
    });
  }

  async restore(sessionId: string): Promise<void> {
    await this.track(async () => {
      const resp = await this.api.getSession(sessionId);
      this.applySession(resp.body, resp.raw);
    });
  }

  async setSketchCondition(editedPgmBase64: string): Promise<void> {
    await this.track(async () => {
      const sid = this.requireSession();
      await this.api.setSketchCondition(sid, editedPgmBase64);
      this.state.conditionSet = true;
      this.state.candidates = [];
      this.state.selectedAlpha = null;
      this.emit();
    });
  }

  async setTextCondition(from: string, to: string): Promise<void> {
    await this.track(async () => {
      const sid = this.requireSession();
      await this.api.setTextCondition(sid, from, to);
      this.state.conditionSet = true;
      this.state.candidates = [];
      this.state.selectedAlpha = null;
      this.emit();
    });
  }

  async setBinaryCondition(attribute: string, sign: 1 | -1): Promise<void> {
    await this.track(async () => {
      const sid = this.requireSession();
      await this.api.setBinaryCondition(sid, attribute, sign);
      this.state.conditionSet = true;
      this.state.candidates = [];
      this.state.selectedAlpha = null;
      this.emit();
    });
  }

  /**
   * Request candidates for the given step sizes. If a request is already
   * in flight the call is queued, and only the most recent queued call
   * survives; the wire never carries two trajectory requests at once.
   */
  async scrub(alphas: number[]): Promise<void> {
    if (this.scrubInFlight) {
      this.scrubQueued = alphas;
      return;
    }
    this.scrubInFlight = true;
    try {
      await this.track(async () => {
        const sid = this.requireSession();
        const resp = await this.api.getTrajectory(sid, alphas);
        this.applyTrajectory(resp.body, resp.raw);
      });
    } finally {
      this.scrubInFlight = false;
      const queued = this.scrubQueued;
      this.scrubQueued = null;
      // a superseded scrub runs as its own task so this caller's promise
      // settles with its own response
      if (queued) void this.scrub(queued).catch(() => undefined);
    }
  }

  get scrubBusy(): boolean {
    return this.scrubInFlight;
  }

  private applyTrajectory(view: TrajectoryView, raw: RawValues): void {
    this.state.candidates = view.candidates.map((cand, i) => {
      const display: Record<string, string> = {};
      for (const field of ["alpha", "code_norm", "similarity"]) {
        const slice = raw.get(`candidates/${i}/${field}`);
        if (slice !== undefined && slice !== "null") display[field] = slice;
      }
      const oracleDisplay: Record<string, string> = {};
      if (cand.oracle_scores) {
        for (const name of Object.keys(cand.oracle_scores)) {
          const slice = raw.get(`candidates/${i}/oracle_scores/${name}`);
          if (slice !== undefined) oracleDisplay[name] = slice;
        }
      }
      return {
        alpha: cand.alpha,
        display,
        oracleDisplay,
        sketchPgmBase64: cand.sketch_pgm,
        selected: view.selected_alpha !== null && cand.alpha === view.selected_alpha,
      };
    });
    this.state.selectedAlpha = view.selected_alpha;
    this.emit();
  }

  /** accept is never optimistic: the page waits for the service's answer */
  async accept(alpha: number): Promise<void> {
    await this.track(async () => {
      const sid = this.requireSession();
      const resp = await this.api.accept(sid, alpha);
      this.applySession(resp.body, resp.raw);
    });
  }

  nearestCandidate(alpha: number): CandidateDisplay | null {
    let best: CandidateDisplay | null = null;
    let bestDist = Infinity;
    for (const cand of this.state.candidates) {
      const d = Math.abs(cand.alpha - alpha);
      if (d < bestDist) {
        best = cand;
        bestDist = d;
      }
    }
    return best;
  }

  private requireSession(): string {
    if (!this.state.session) throw new Error("no active session");
    return this.state.session.session_id;
  }

  private async track(fn: () => Promise<void>): Promise<void> {
    this.state.pendingRequests++;
    this.state.lastError = null;
    this.emit();
    try {
      await fn();
    } catch (e) {
      this.state.lastError = e instanceof Error ? e.message : String(e);
      this.emit();
      throw e;
    } finally {
      this.state.pendingRequests--;
      this.emit();
    }
  }
}
