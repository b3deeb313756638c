import { type StylizeApi } from "./api.js";
import { cacheKey, clampKnob, type Axis, type SessionState } from "./state.js";
import { debounce } from "./debounce.js";

export const DEBOUNCE_MS = 250;

/** What the controller needs from the page; kept tiny so tests can fake it. */
export interface PreviewView {
  showPreview(png: Uint8Array): void;
  showError(message: string): void;
}

/**
 * Drives the live preview image. Invariants:
 *   - at most one stylize request in flight at a time;
 *   - a (alpha, beta) pair already cached never hits the network;
 *   - a failed request leaves the session state untouched.
 */
export class PreviewController {
  private pendingRefresh = false;
  private readonly scheduleRefresh: () => void;

  constructor(
    private readonly state: SessionState,
    private readonly client: StylizeApi,
    private readonly view: PreviewView,
    debounceMs = DEBOUNCE_MS,
  ) {
    this.scheduleRefresh = debounce(() => {
      void this.refresh();
    }, debounceMs);
  }

  /** Slider/numeric-field handler: update the knob, refresh after the drag settles. */
  onSliderChange(axis: Axis, value: number): void {
    this.state[axis] = clampKnob(value);
    this.scheduleRefresh();
  }

  /** Jump both knobs at once (grid cell click) and refresh immediately. */
  setKnobs(alpha: number, beta: number): Promise<void> {
    this.state.alpha = clampKnob(alpha);
    this.state.beta = clampKnob(beta);
    return this.refresh();
  }

  /** New content or style image: cached tiles no longer apply. */
  onImagesChanged(): Promise<void> {
    this.state.cache.clear();
    this.state.lastResponse = null;
    return this.refresh();
  }

  async refresh(): Promise<void> {
    const { contentB64, styleB64, alpha, beta } = this.state;
    if (contentB64 === null || styleB64 === null) return;

    const cached = this.state.cache.get(alpha, beta);
    if (cached !== undefined) {
      this.state.lastResponse = cached;
      this.view.showPreview(cached);
      return;
    }

    if (this.state.inFlight) {
      this.pendingRefresh = true;
      return;
    }

    this.state.inFlight = true;
    try {
      const png = await this.client.stylize({
        content_b64: contentB64,
        style_b64: styleB64,
        alpha,
        beta,
      });
      const tile = this.state.cache.put(alpha, beta, png);
      // Only swap the preview if the knobs haven't moved on during the request.
      if (cacheKey(this.state.alpha, this.state.beta) === cacheKey(alpha, beta)) {
        this.state.lastResponse = tile;
        this.view.showPreview(tile);
      }
    } catch (err) {
      this.view.showError(err instanceof Error ? err.message : String(err));
    } finally {
      this.state.inFlight = false;
      if (this.pendingRefresh) {
        this.pendingRefresh = false;
        void this.refresh();
      }
    }
  }
}
