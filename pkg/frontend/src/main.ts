import { ApiClient } from "./api.js";
import { GridController, linspace01, type GridCell } from "./grid.js";
import { PreviewController } from "./preview.js";
import { bytesToBase64, downscaleToPng } from "./scale.js";
import { initialState, snapKnob, type Axis } from "./state.js";
import { showToast } from "./toast.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function pngBlobUrl(bytes: Uint8Array): string {
  return URL.createObjectURL(new Blob([bytes.slice().buffer], { type: "image/png" }));
}

/** Swap an img to new PNG bytes, releasing the previous blob URL. */
function setImage(img: HTMLImageElement, bytes: Uint8Array): void {
  const old = img.src;
  img.src = pngBlobUrl(bytes);
  if (old.startsWith("blob:")) URL.revokeObjectURL(old);
}

const state = initialState();
const client = new ApiClient();
const previewImg = el<HTMLImageElement>("preview");

const preview = new PreviewController(state, client, {
  showPreview: (png) => setImage(previewImg, png),
  showError: (message) => showToast(message),
});
const grid = new GridController(state, client);

// --- knob widgets ----------------------------------------------------------

const widgets: Record<Axis, { slider: HTMLInputElement; field: HTMLInputElement }> = {
  alpha: { slider: el("alpha-slider"), field: el("alpha-field") },
  beta: { slider: el("beta-slider"), field: el("beta-field") },
};

function syncKnobWidgets(): void {
  for (const axis of ["alpha", "beta"] as const) {
    const { slider, field } = widgets[axis];
    slider.value = String(snapKnob(state[axis]));
    field.value = state[axis].toFixed(2);
  }
}

for (const axis of ["alpha", "beta"] as const) {
  const { slider, field } = widgets[axis];
  slider.addEventListener("input", () => {
    preview.onSliderChange(axis, Number(slider.value));
    field.value = state[axis].toFixed(2);
  });
  // Full-precision entry lives in the numeric field.
  field.addEventListener("change", () => {
    preview.onSliderChange(axis, Number(field.value));
    slider.value = String(snapKnob(state[axis]));
    field.value = String(state[axis]);
  });
}

// --- image pickers ---------------------------------------------------------

function wirePicker(inputId: string, thumbId: string, slot: "contentB64" | "styleB64"): void {
  const input = el<HTMLInputElement>(inputId);
  input.addEventListener("change", () => {
    const file = input.files?.[0];
    if (!file) return;
    void (async () => {
      try {
        const bytes = await downscaleToPng(file);
        state[slot] = bytesToBase64(bytes);
        setImage(el<HTMLImageElement>(thumbId), bytes);
        clearGrid();
        await preview.onImagesChanged();
      } catch (err) {
        showToast(err instanceof Error ? err.message : String(err));
      }
    })();
  });
}

wirePicker("content-input", "content-thumb", "contentB64");
wirePicker("style-input", "style-thumb", "styleB64");

// --- grid ------------------------------------------------------------------

const gridTable = el<HTMLTableElement>("grid-table");

function clearGrid(): void {
  gridTable.replaceChildren();
}

function renderGrid(n: number): void {
  clearGrid();
  const axes = { alphas: linspace01(n), betas: linspace01(n) };
  const tiles = new Map<GridCell, HTMLTableCellElement>();

  let cells: GridCell[];
  try {
    cells = grid.prepare(axes, (cell) => ({
      showTile: (png) => {
        const td = tiles.get(cell);
        if (!td) return;
        const img = document.createElement("img");
        img.alt = `alpha ${cell.alpha.toFixed(2)}, beta ${cell.beta.toFixed(2)}`;
        setImage(img, png);
        td.replaceChildren(img);
      },
      showError: (message) => {
        const td = tiles.get(cell);
        if (!td) return;
        td.classList.add("error");
        td.title = message;
        td.textContent = "!";
      },
    }));
  } catch (err) {
    showToast(err instanceof Error ? err.message : String(err));
    return;
  }

  const rows = new Map<number, HTMLTableRowElement>();
  for (const cell of cells) {
    let tr = rows.get(cell.row);
    if (!tr) {
      tr = gridTable.insertRow();
      rows.set(cell.row, tr);
    }
    const td = tr.insertCell();
    td.title = `alpha ${cell.alpha.toFixed(2)}, beta ${cell.beta.toFixed(2)}`;
    td.addEventListener("click", () => {
      void preview.setKnobs(cell.alpha, cell.beta);
      syncKnobWidgets();
    });
    tiles.set(cell, td);
  }

  // Fetch tiles as they scroll into view; eagerly when the observer is missing.
  if (typeof IntersectionObserver === "undefined") {
    void grid.loadAll(cells);
  } else {
    const byTarget = new Map<Element, GridCell>();
    const observer = new IntersectionObserver(
      (entries) => {
        for (const entry of entries) {
          if (!entry.isIntersecting) continue;
          const cell = byTarget.get(entry.target);
          if (cell) {
            observer.unobserve(entry.target);
            void cell.load();
          }
        }
      },
      { rootMargin: "100px" },
    );
    for (const [cell, td] of tiles) {
      byTarget.set(td, cell);
      observer.observe(td);
    }
  }
}

el<HTMLButtonElement>("grid-button").addEventListener("click", () => {
  renderGrid(Number(el<HTMLInputElement>("grid-size").value) || 5);
});

// --- health ----------------------------------------------------------------

const healthSpan = el<HTMLSpanElement>("health");

async function pollHealth(): Promise<void> {
  try {
    const report = await client.health();
    healthSpan.textContent =
      report.status === "ready"
        ? `model ${report.model_hash?.slice(0, 12) ?? "?"}`
        : `service ${report.status}…`;
    if (report.status === "loading") setTimeout(() => void pollHealth(), 2000);
  } catch {
    healthSpan.textContent = "service unreachable";
  }
}

syncKnobWidgets();
void pollHealth();
