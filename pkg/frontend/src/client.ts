/**
 * Server session: fetches /info, opens the /stream socket, sends orbit
 * poses (throttled to <= 60/s with strictly increasing seq) and hands
 * monotonically ordered frames to the caller. WebSocket and fetch are
 * injected so the logic is testable without a browser or server.
 */

import { Hull, OrbitCamera, Pose } from "./orbit.js";
import { decodeFrame, Frame, FrameGate } from "./stream.js";
import { Throttle } from "./throttle.js";

export interface ServerInfo {
  V: number;
  D: number;
  K: number;
  width: number;
  height: number;
  hull: Hull;
  param_count: number;
  opx: number;
  centering: string;
  scene: Record<string, unknown>;
}

export interface FrameStats {
  renderMs: number;
  planesUsed: number;
  fps: number;
}

export type ConnectionStatus = "connecting" | "connected" | "error" | "closed";

export interface ViewerState {
  status: ConnectionStatus;
  info: ServerInfo | null;
  orbit: OrbitCamera;
  kPlanes: number;
  lastFrame: FrameStats | null;
  lastError: string | null;
}

/** Minimal structural WebSocket type so tests can inject a fake. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: ArrayBuffer | string }) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  binaryType?: string;
}

export interface ClientOptions {
  makeSocket: (url: string) => SocketLike;
  fetchFn: (url: string, init?: RequestInit) => Promise<Response>;
  poseRatePerSecond?: number;
  now?: () => number;
  onFrame?: (frame: Frame) => void;
  onStateChange?: (state: ViewerState) => void;
}

export class ViewerClient {
  readonly state: ViewerState;
  private socket: SocketLike | null = null;
  private seq = 0;
  private readonly gate = new FrameGate();
  private readonly throttle: Throttle<Pose>;
  private readonly opts: ClientOptions;
  private lastFrameTime: number | null = null;

  constructor(private readonly baseUrl: string, opts: ClientOptions) {
    this.opts = opts;
    this.state = {
      status: "connecting",
      info: null,
      orbit: new OrbitCamera(),
      kPlanes: 0,
      lastFrame: null,
      lastError: null,
    };
    this.throttle = new Throttle<Pose>(
      (pose) => this.sendPoseNow(pose),
      opts.poseRatePerSecond ?? 60,
      opts.now,
    );
  }

  /** Fetch /info, open the stream, and request the first frame. */
  async connect(): Promise<void> {
    try {
      const res = await this.opts.fetchFn(`${this.baseUrl}/info`);
      if (!res.ok) throw new Error(`/info returned ${res.status}`);
      const info = (await res.json()) as ServerInfo;
      this.state.info = info;
      this.state.kPlanes = info.K;
      this.state.orbit = new OrbitCamera({ pivot: [0, 0, 1] }, info.hull);
    } catch (err) {
      this.fail(`connection failed: ${String(err)}`);
      throw err;
    }

    const wsUrl = this.baseUrl.replace(/^http/, "ws") + "/stream";
    const socket = this.opts.makeSocket(wsUrl);
    socket.binaryType = "arraybuffer";
    this.socket = socket;
    socket.onmessage = (ev) => this.onMessage(ev.data);
    socket.onerror = () => this.fail("socket error");
    socket.onclose = () => {
      if (this.state.status !== "error") this.setStatus("closed");
    };
    await new Promise<void>((resolve, reject) => {
      socket.onopen = () => resolve();
      socket.onerror = () => reject(new Error("socket error"));
    });
    this.setStatus("connected");
    this.sendPoseNow(this.state.orbit.pose());
  }

  /** Queue the current orbit pose (throttled). */
  sendPose(): void {
    this.throttle.push(this.state.orbit.pose());
  }

  private sendPoseNow(pose: Pose): void {
    if (this.socket === null || this.state.status !== "connected") return;
    this.seq += 1;
    this.socket.send(JSON.stringify({ seq: this.seq, ...pose }));
  }

  /** POST /select_planes; on 400 the previous K is restored. */
  async setKPlanes(k: number): Promise<{ ok: boolean; error?: string }> {
    const previous = this.state.kPlanes;
    this.state.kPlanes = k;
    this.notify();
    const res = await this.opts.fetchFn(`${this.baseUrl}/select_planes`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ k }),
    });
    if (!res.ok) {
      this.state.kPlanes = previous;
      const body = (await res.json().catch(() => ({}))) as { error?: string };
      const error = body.error ?? `select_planes returned ${res.status}`;
      this.state.lastError = error;
      this.notify();
      return { ok: false, error };
    }
    this.sendPose();
    return { ok: true };
  }

  private onMessage(data: ArrayBuffer | string): void {
    if (typeof data === "string") {
      const msg = JSON.parse(data) as { error?: string };
      if (msg.error) {
        this.state.lastError = msg.error;
        this.notify();
      }
      return;
    }
    const frame = decodeFrame(data);
    if (!this.gate.accept(frame)) return;
    const now = (this.opts.now ?? Date.now)();
    const fps = this.lastFrameTime !== null && now > this.lastFrameTime
      ? 1000 / (now - this.lastFrameTime)
      : 0;
    this.lastFrameTime = now;
    this.state.lastFrame = {
      renderMs: frame.renderMs,
      planesUsed: frame.planesUsed,
      fps,
    };
    this.opts.onFrame?.(frame);
    this.notify();
  }

  get highestSeq(): number {
    return this.gate.highestSeq;
  }

  close(): void {
    this.throttle.dispose();
    this.socket?.close();
    this.setStatus("closed");
  }

  private fail(message: string): void {
    this.state.lastError = message;
    this.setStatus("error");
  }

  private setStatus(status: ConnectionStatus): void {
    this.state.status = status;
    this.notify();
  }

  private notify(): void {
    this.opts.onStateChange?.(this.state);
  }
}
