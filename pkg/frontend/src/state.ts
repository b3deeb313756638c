/**
 * Session state shared by the preview and grid controllers, plus the
 * small pure helpers that keep knob values and cache keys consistent.
 */

export type Axis = "alpha" | "beta";

/** Sliders move in 0.05 steps; the numeric fields accept full precision. */
export const KNOB_STEP = 0.05;

export interface SessionState {
  contentB64: string | null;
  styleB64: string | null;
  alpha: number;
  beta: number;
  lastResponse: Uint8Array | null;
  inFlight: boolean;
  cache: TileCache;
}

export function initialState(): SessionState {
  return {
    contentB64: null,
    styleB64: null,
    alpha: 1,
    beta: 1,
    lastResponse: null,
    inFlight: false,
    cache: new TileCache(),
  };
}

/** Clamp a knob to [0, 1]; NaN collapses to 0. */
export function clampKnob(value: number): number {
  if (Number.isNaN(value)) return 0;
  return Math.min(1, Math.max(0, value));
}

/** Snap a knob to the nearest slider step (0.05), staying inside [0, 1]. */
export function snapKnob(value: number): number {
  return clampKnob(Math.round(clampKnob(value) / KNOB_STEP) * KNOB_STEP);
}

/** Cache key: both knobs rounded to two decimals, so 0.05 steps map cleanly. */
export function cacheKey(alpha: number, beta: number): string {
  return `${alpha.toFixed(2)},${beta.toFixed(2)}`;
}

/**
 * Write-once tile store. A key's bytes never change after the first
 * insertion: a second put with the same (alpha, beta) is ignored and the
 * original tile is handed back, so every holder of a tile sees the same
 * bytes forever.
 */
export class TileCache {
  private tiles = new Map<string, Uint8Array>();

  get(alpha: number, beta: number): Uint8Array | undefined {
    return this.tiles.get(cacheKey(alpha, beta));
  }

  has(alpha: number, beta: number): boolean {
    return this.tiles.has(cacheKey(alpha, beta));
  }

  put(alpha: number, beta: number, png: Uint8Array): Uint8Array {
    const key = cacheKey(alpha, beta);
    const existing = this.tiles.get(key);
    if (existing !== undefined) return existing;
    this.tiles.set(key, png);
    return png;
  }

  clear(): void {
    this.tiles.clear();
  }

  get size(): number {
    return this.tiles.size;
  }
}
