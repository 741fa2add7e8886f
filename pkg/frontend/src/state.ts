/**
 * Viewer state and its pure mapping onto render-service queries.
 *
 * The client does no rendering math of its own: every pixel shown comes from
 * the service. The only geometry here is the orbit-to-pose serialization,
 * which exists so the wire format stays the single source of truth.
 */

export type Channel = "rgb" | "unc" | "depth" | "filtered";

export interface MetaPayload {
  aabb: [number[], number[]];
  M: number;
  log_sigma_range: [number, number];
  default_camera: {
    pose: number[];
    fx: number;
    fy: number;
    width: number;
    height: number;
  };
}

export interface ViewerState {
  /** Orbit pose around a fixed target; integer degrees so a full turn is exact. */
  azimuthDeg: number;
  elevationDeg: number;
  radius: number;
  target: [number, number, number];
  channel: Channel;
  /** Normalized log-uncertainty threshold; the slider is locked to [0, 1]. */
  threshold: number;
  width: number;
  height: number;
  meta: MetaPayload | null;
}

export function initialState(meta: MetaPayload): ViewerState {
  const [lo, hi] = meta.aabb;
  const target: [number, number, number] = [
    (lo[0] + hi[0]) / 2,
    (lo[1] + hi[1]) / 2,
    (lo[2] + hi[2]) / 2,
  ];
  const extent = Math.max(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]);
  return {
    azimuthDeg: 30,
    elevationDeg: 25,
    radius: 1.6 * extent,
    target,
    channel: "rgb",
    threshold: 1.0,
    width: meta.default_camera.width,
    height: meta.default_camera.height,
    meta,
  };
}

export function clampThreshold(value: number): number {
  if (Number.isNaN(value)) return 0;
  return Math.min(1, Math.max(0, value));
}

/** Orbit update; azimuth wraps in integer degrees so +360 is the identity. */
export function orbitBy(state: ViewerState, dAzimuthDeg: number, dElevationDeg: number): ViewerState {
  const az = ((state.azimuthDeg + Math.round(dAzimuthDeg)) % 360 + 360) % 360;
  const el = Math.min(89, Math.max(-89, state.elevationDeg + Math.round(dElevationDeg)));
  return { ...state, azimuthDeg: az, elevationDeg: el };
}

function cross(a: number[], b: number[]): number[] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function normalize(v: number[]): number[] {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

/**
 * Row-major 3x4 [R|t] pose for the orbit state, matching the service's
 * camera convention: +z forward, pixel y downward, world +z up.
 */
export function poseFromOrbit(state: ViewerState): number[] {
  const az = (state.azimuthDeg * Math.PI) / 180;
  const el = (state.elevationDeg * Math.PI) / 180;
  const offset = [
    state.radius * Math.cos(el) * Math.cos(az),
    state.radius * Math.cos(el) * Math.sin(az),
    state.radius * Math.sin(el),
  ];
  const position = [
    state.target[0] + offset[0],
    state.target[1] + offset[1],
    state.target[2] + offset[2],
  ];
  const forward = normalize([
    state.target[0] - position[0],
    state.target[1] - position[1],
    state.target[2] - position[2],
  ]);
  let up = [0, 0, 1];
  const side = cross(forward, up);
  if (Math.hypot(side[0], side[1], side[2]) < 1e-9) {
    up = [0, 1, 0];
  }
  const right = normalize(cross(forward, up));
  const down = cross(forward, right);
  return [
    right[0], down[0], forward[0], position[0],
    right[1], down[1], forward[1], position[1],
    right[2], down[2], forward[2], position[2],
  ];
}

/** The full render URL for a state; a pure function of its arguments. */
export function buildRenderUrl(base: string, state: ViewerState): string {
  const meta = state.meta;
  if (meta === null) {
    throw new Error("cannot build a render request before /meta arrives");
  }
  const pose = poseFromOrbit(state).join(",");
  const fx = meta.default_camera.fx * (state.width / meta.default_camera.width);
  const fy = meta.default_camera.fy * (state.height / meta.default_camera.height);
  let url = `${base}/render?pose=${pose}&fx=${fx}&fy=${fy}` +
    `&w=${state.width}&h=${state.height}&channel=${state.channel}`;
  if (state.channel === "filtered") {
    url += `&threshold=${clampThreshold(state.threshold)}`;
  }
  return url;
}
