import { describe, expect, it } from "vitest";

import {
  clampToHull,
  insideHull,
  OrbitCamera,
  orbitCenter,
  orbitPose,
} from "../src/orbit.js";

const HULL = { lo: [-0.12, -0.12, 0] as [number, number, number],
               hi: [0.12, 0.12, 0] as [number, number, number] };

describe("orbit parameterization", () => {
  it("azimuth 0, elevation 0 sits behind the pivot on -Z", () => {
    const c = orbitCenter({ azimuth: 0, elevation: 0, radius: 2, pivot: [0, 0, 5] });
    expect(c[0]).toBeCloseTo(0, 12);
    expect(c[1]).toBeCloseTo(0, 12);
    expect(c[2]).toBeCloseTo(3, 12);
  });

  it("drag of 90 degrees azimuth moves the center along the orbit circle", () => {
    const p = { azimuth: 0, elevation: 0, radius: 1, pivot: [0, 0, 0] as [number, number, number] };
    const before = orbitCenter(p);
    const after = orbitCenter({ ...p, azimuth: Math.PI / 2 });
    // both on the circle of radius 1...
    expect(Math.hypot(...before)).toBeCloseTo(1, 12);
    expect(Math.hypot(...after)).toBeCloseTo(1, 12);
    // ...and a quarter turn apart: chord length sqrt(2), dot product 0
    const dot = before[0] * after[0] + before[1] * after[1] + before[2] * after[2];
    expect(dot).toBeCloseTo(0, 12);
    expect(after[0]).toBeCloseTo(1, 12);
  });

  it("elevation moves the center up and keeps the radius", () => {
    const c = orbitCenter({ azimuth: 0.3, elevation: 0.5, radius: 2, pivot: [1, 2, 3] });
    const r = Math.hypot(c[0] - 1, c[1] - 2, c[2] - 3);
    expect(r).toBeCloseTo(2, 12);
    expect(c[1]).toBeGreaterThan(2);
  });

  it("pose always looks at the pivot with world up", () => {
    const pose = orbitPose({ azimuth: 1.1, elevation: -0.4, radius: 0.5, pivot: [0, 0, 4] });
    expect(pose.look_at).toEqual([0, 0, 4]);
    expect(pose.up).toEqual([0, 1, 0]);
  });

  it("drag accumulates and clamps elevation short of the poles", () => {
    const cam = new OrbitCamera({ radius: 1 });
    cam.drag(100, 0);
    expect(cam.params.azimuth).toBeCloseTo(1.0, 12);
    cam.drag(0, 100000);
    expect(cam.params.elevation).toBeLessThan(Math.PI / 2);
    cam.drag(0, -200000);
    expect(cam.params.elevation).toBeGreaterThan(-Math.PI / 2);
  });

  it("wheel changes radius and never goes negative", () => {
    const cam = new OrbitCamera({ radius: 0.01 });
    cam.wheel(5);
    expect(cam.params.radius).toBeCloseTo(0.015, 12);
    cam.wheel(-1e9);
    expect(cam.params.radius).toBe(0);
  });

  it("clampToHull projects into the advertised box", () => {
    const c = clampToHull([0.5, -0.5, 1], HULL);
    expect(c).toEqual([0.12, -0.12, 0]);
    expect(insideHull(c, HULL)).toBe(true);
    expect(insideHull([0.5, 0, 0], HULL)).toBe(false);
  });

  it("camera built with a hull emits only in-hull poses", () => {
    const cam = new OrbitCamera({ radius: 5, pivot: [0, 0, 1] }, HULL);
    for (let i = 0; i < 50; i++) {
      cam.drag(37, 13);
      expect(insideHull(cam.pose().c, HULL)).toBe(true);
    }
  });
});
