/**
 * Orbit-camera parameterization: the camera sits on a sphere of `radius`
 * around `pivot`, at angles `azimuth` (radians around +Y, 0 = looking down
 * +Z from behind the pivot) and `elevation` (radians above the XZ plane).
 * The camera always looks at the pivot, which keeps generated poses inside
 * the rig's interpolation hull when the radius is small.
 */

export type Vec3 = [number, number, number];

export interface Hull {
  lo: Vec3;
  hi: Vec3;
}

export interface OrbitParams {
  azimuth: number;
  elevation: number;
  radius: number;
  pivot: Vec3;
}

export interface Pose {
  c: Vec3;
  look_at: Vec3;
  up: Vec3;
}

const EPS = 1e-6;
/** Keep elevation strictly inside +-90 deg so `up` never degenerates. */
const MAX_ELEVATION = Math.PI / 2 - 0.01;

export function clampScalar(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

/** Camera center for the given orbit parameters. */
export function orbitCenter(p: OrbitParams): Vec3 {
  const ce = Math.cos(p.elevation);
  return [
    p.pivot[0] + p.radius * Math.sin(p.azimuth) * ce,
    p.pivot[1] + p.radius * Math.sin(p.elevation),
    p.pivot[2] - p.radius * Math.cos(p.azimuth) * ce,
  ];
}

/** Full pose (center, look-at = pivot, world-up). */
export function orbitPose(p: OrbitParams): Pose {
  return { c: orbitCenter(p), look_at: [...p.pivot], up: [0, 1, 0] };
}

/** Clamp a point component-wise into the hull advertised by /info. */
export function clampToHull(c: Vec3, hull: Hull): Vec3 {
  return [
    clampScalar(c[0], hull.lo[0], hull.hi[0]),
    clampScalar(c[1], hull.lo[1], hull.hi[1]),
    clampScalar(c[2], hull.lo[2], hull.hi[2]),
  ];
}

export function insideHull(c: Vec3, hull: Hull): boolean {
  return c.every((v, i) => v >= hull.lo[i] - EPS && v <= hull.hi[i] + EPS);
}

export class OrbitCamera {
  params: OrbitParams;
  private readonly hull: Hull | null;

  constructor(initial: Partial<OrbitParams> = {}, hull: Hull | null = null) {
    this.params = {
      azimuth: initial.azimuth ?? 0,
      elevation: initial.elevation ?? 0,
      radius: initial.radius ?? 0.05,
      pivot: initial.pivot ?? [0, 0, 1],
    };
    this.hull = hull;
  }

  /** Drag rotates: dx -> azimuth, dy -> elevation (pixels * sensitivity). */
  drag(dx: number, dy: number, sensitivity = 0.01): void {
    this.params.azimuth += dx * sensitivity;
    this.params.elevation = clampScalar(
      this.params.elevation + dy * sensitivity,
      -MAX_ELEVATION,
      MAX_ELEVATION,
    );
  }

  /** Wheel dollies: positive delta moves away from the pivot. */
  wheel(delta: number, step = 0.001): void {
    this.params.radius = Math.max(0, this.params.radius + delta * step);
  }

  /** Shift-drag pans the pivot in the camera's screen plane (x/y only). */
  pan(dx: number, dy: number, sensitivity = 0.001): void {
    const az = this.params.azimuth;
    this.params.pivot[0] += (-dx * Math.cos(az)) * sensitivity;
    this.params.pivot[1] += dy * sensitivity;
    this.params.pivot[2] += (-dx * Math.sin(az)) * sensitivity;
  }

  /** Pose with the center clamped into the hull (when one was advertised). */
  pose(): Pose {
    const p = orbitPose(this.params);
    if (this.hull !== null) {
      p.c = clampToHull(p.c, this.hull);
    }
    return p;
  }
}
