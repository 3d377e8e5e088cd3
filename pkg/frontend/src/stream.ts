/**
 * Binary frame protocol: each frame is a 24-byte header of six
 * little-endian uint32s — seq, width, height, render_ms, planes_used,
 * flags — followed by the payload (raw RGB8, or PNG when flag bit 1 is
 * set). Flag bit 0 marks a pose that was clamped to the rig hull.
 */

export const HEADER_BYTES = 24;
export const FLAG_CLAMPED = 1;
export const FLAG_PNG = 2;

export interface Frame {
  seq: number;
  width: number;
  height: number;
  renderMs: number;
  planesUsed: number;
  flags: number;
  payload: Uint8Array;
}

export function decodeFrame(buffer: ArrayBuffer): Frame {
  if (buffer.byteLength < HEADER_BYTES) {
    throw new Error(`frame too short: ${buffer.byteLength} bytes`);
  }
  const dv = new DataView(buffer);
  const frame: Frame = {
    seq: dv.getUint32(0, true),
    width: dv.getUint32(4, true),
    height: dv.getUint32(8, true),
    renderMs: dv.getUint32(12, true),
    planesUsed: dv.getUint32(16, true),
    flags: dv.getUint32(20, true),
    payload: new Uint8Array(buffer, HEADER_BYTES),
  };
  if (!(frame.flags & FLAG_PNG) &&
      frame.payload.byteLength !== frame.width * frame.height * 3) {
    throw new Error(
      `RGB8 payload size ${frame.payload.byteLength} != ` +
      `${frame.width}x${frame.height}x3`,
    );
  }
  return frame;
}

/** Expand raw RGB8 into RGBA for a canvas ImageData buffer. */
export function rgbToRgba(rgb: Uint8Array, width: number, height: number) {
  const out = new Uint8ClampedArray(width * height * 4);
  for (let i = 0, j = 0; i < rgb.length; i += 3, j += 4) {
    out[j] = rgb[i];
    out[j + 1] = rgb[i + 1];
    out[j + 2] = rgb[i + 2];
    out[j + 3] = 255;
  }
  return out;
}

/**
 * Display-side monotonicity gate: accepts a frame only if its seq is at
 * least the highest seen, so the screen never regresses to a stale frame
 * even if the transport reorders messages.
 */
export class FrameGate {
  private highest = -1;

  accept(frame: Frame): boolean {
    if (frame.seq < this.highest) return false;
    this.highest = frame.seq;
    return true;
  }

  get highestSeq(): number {
    return this.highest;
  }
}
