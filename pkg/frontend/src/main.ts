/**
 * DOM wiring: canvas display, drag/wheel navigation, K slider, stats
 * overlay and error banner. All protocol logic lives in client.ts; this
 * file only translates browser events into ViewerClient calls.
 */

import { ViewerClient, ViewerState } from "./client.js";
import { Frame, FLAG_CLAMPED, rgbToRgba } from "./stream.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function drawFrame(canvas: HTMLCanvasElement, frame: Frame): void {
  canvas.width = frame.width;
  canvas.height = frame.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const rgba = rgbToRgba(frame.payload, frame.width, frame.height);
  ctx.putImageData(new ImageData(rgba, frame.width, frame.height), 0, 0);
}

function renderOverlay(state: ViewerState, frame: Frame | null): void {
  const overlay = el<HTMLDivElement>("overlay");
  const info = state.info;
  const stats = state.lastFrame;
  const parts: string[] = [];
  if (info) {
    parts.push(`V=${info.V} D=${info.D} params=${info.param_count.toLocaleString()}`);
    parts.push(`OPX/px=${Math.round(info.opx).toLocaleString()}`);
  }
  if (stats) {
    parts.push(`render ${stats.renderMs} ms`);
    parts.push(`planes ${stats.planesUsed}`);
    parts.push(`${stats.fps.toFixed(1)} fps`);
  }
  if (frame && frame.flags & FLAG_CLAMPED) parts.push("pose clamped");
  overlay.textContent = parts.join(" · ");
}

function showBanner(message: string | null): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = message ?? "";
  banner.style.display = message ? "block" : "none";
}

function showToast(message: string): void {
  const toast = el<HTMLDivElement>("toast");
  toast.textContent = message;
  toast.style.display = "block";
  setTimeout(() => {
    toast.style.display = "none";
  }, 2500);
}

export async function start(baseUrl: string): Promise<ViewerClient> {
  const canvas = el<HTMLCanvasElement>("view");
  const slider = el<HTMLInputElement>("k-slider");
  const kLabel = el<HTMLSpanElement>("k-label");
  const status = el<HTMLSpanElement>("status");
  let lastFrame: Frame | null = null;

  const client = new ViewerClient(baseUrl, {
    makeSocket: (url) => new WebSocket(url) as unknown as ReturnType<never>,
    fetchFn: (url, init) => fetch(url, init),
    onFrame: (frame) => {
      lastFrame = frame;
      drawFrame(canvas, frame);
    },
    onStateChange: (state) => {
      status.textContent = state.status;
      renderOverlay(state, lastFrame);
      showBanner(state.status === "error" ? state.lastError : null);
    },
  });

  try {
    await client.connect();
  } catch {
    showBanner(`cannot reach ${baseUrl} — retrying in 3 s`);
    setTimeout(() => start(baseUrl), 3000);
    return client;
  }

  const info = client.state.info;
  if (info) {
    slider.min = "1";
    slider.max = String(info.D);
    slider.value = String(client.state.kPlanes);
    kLabel.textContent = slider.value;
  }

  slider.addEventListener("change", async () => {
    const k = Number(slider.value);
    const result = await client.setKPlanes(k);
    if (!result.ok) {
      slider.value = String(client.state.kPlanes);
      showToast(result.error ?? "plane selection rejected");
    }
    kLabel.textContent = slider.value;
  });

  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  canvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    lastX = ev.clientX;
    lastY = ev.clientY;
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const dx = ev.clientX - lastX;
    const dy = ev.clientY - lastY;
    lastX = ev.clientX;
    lastY = ev.clientY;
    if (ev.shiftKey) {
      client.state.orbit.pan(dx, dy);
    } else {
      client.state.orbit.drag(dx, dy);
    }
    client.sendPose();
  });
  canvas.addEventListener("pointerup", () => {
    dragging = false;
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    client.state.orbit.wheel(ev.deltaY);
    client.sendPose();
  });

  return client;
}

declare global {
  interface Window {
    liveviewStart: typeof start;
  }
}

if (typeof window !== "undefined") {
  window.liveviewStart = start;
  if (document.getElementById("view")) {
    const url = new URLSearchParams(location.search).get("server") ??
      `${location.protocol}//${location.host}`;
    void start(url);
  }
}
