import { type StylizeApi } from "./api.js";
import { type SessionState } from "./state.js";
import { TaskQueue } from "./queue.js";

export const GRID_MAX_CONCURRENT = 4;

/** Knob values for each axis of the mosaic; rows sweep beta, columns alpha. */
export interface GridRequest {
  alphas: number[];
  betas: number[];
}

export interface GridCellView {
  showTile(png: Uint8Array): void;
  showError(message: string): void;
}

/** One mosaic cell. `load` is idempotent: the first call fetches, later calls reuse it. */
export interface GridCell {
  readonly row: number;
  readonly col: number;
  readonly alpha: number;
  readonly beta: number;
  load(): Promise<void>;
}

/**
 * Builds the alpha-by-beta mosaic. Cells share the session tile cache, so
 * anything the preview already fetched costs no request here (and vice
 * versa), and at most `GRID_MAX_CONCURRENT` fetches run at once. A cell
 * that fails renders its own error tile without disturbing the rest.
 */
export class GridController {
  constructor(
    private readonly state: SessionState,
    private readonly client: StylizeApi,
    private readonly queue = new TaskQueue(GRID_MAX_CONCURRENT),
  ) {}

  /**
   * Create lazy cells for the request. The page hooks each cell's `load`
   * to its visibility; `loadAll` is the eager path.
   */
  prepare(request: GridRequest, viewFor: (cell: GridCell) => GridCellView): GridCell[] {
    const { contentB64, styleB64 } = this.state;
    if (contentB64 === null || styleB64 === null) {
      throw new Error("select content and style images first");
    }
    if (request.alphas.length === 0 || request.betas.length === 0) {
      throw new Error("grid needs at least one alpha and one beta");
    }
    for (const v of [...request.alphas, ...request.betas]) {
      if (!Number.isFinite(v) || v < 0 || v > 1) {
        throw new Error("grid knob values must lie in [0, 1]");
      }
    }

    const cells: GridCell[] = [];
    request.betas.forEach((beta, row) => {
      request.alphas.forEach((alpha, col) => {
        let done: Promise<void> | undefined;
        const cell: GridCell = {
          row,
          col,
          alpha,
          beta,
          load: () => {
            done ??= this.loadTile(contentB64, styleB64, cell, viewFor(cell));
            return done;
          },
        };
        cells.push(cell);
      });
    });
    return cells;
  }

  async loadAll(cells: GridCell[]): Promise<void> {
    await Promise.all(cells.map((cell) => cell.load()));
  }

  private async loadTile(
    contentB64: string,
    styleB64: string,
    cell: GridCell,
    view: GridCellView,
  ): Promise<void> {
    const cached = this.state.cache.get(cell.alpha, cell.beta);
    if (cached !== undefined) {
      view.showTile(cached);
      return;
    }
    try {
      const png = await this.queue.run(() =>
        this.client.stylize({
          content_b64: contentB64,
          style_b64: styleB64,
          alpha: cell.alpha,
          beta: cell.beta,
        }),
      );
      view.showTile(this.state.cache.put(cell.alpha, cell.beta, png));
    } catch (err) {
      view.showError(err instanceof Error ? err.message : String(err));
    }
  }
}

/** n evenly spaced values across [0, 1] — the usual grid axes. */
export function linspace01(n: number): number[] {
  if (!Number.isInteger(n) || n < 1) {
    throw new Error("grid size must be a positive integer");
  }
  if (n === 1) return [0.5];
  return Array.from({ length: n }, (_, i) => i / (n - 1));
}
