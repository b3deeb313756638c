/**
 * Client-side downscaling: uploads are capped at 512 px on the longest
 * side before they ever leave the browser, which keeps request bodies
 * small and stylize latency low.
 */

export const MAX_UPLOAD_SIDE = 512;

export interface Dimensions {
  width: number;
  height: number;
}

/**
 * Fit (width, height) inside a maxSide square, preserving aspect ratio.
 * Images already small enough come back unchanged — never upscale.
 */
export function fitWithin(width: number, height: number, maxSide = MAX_UPLOAD_SIDE): Dimensions {
  if (width < 1 || height < 1) {
    throw new Error("image dimensions must be positive");
  }
  const longest = Math.max(width, height);
  if (longest <= maxSide) {
    return { width, height };
  }
  const scale = maxSide / longest;
  return {
    width: Math.max(1, Math.round(width * scale)),
    height: Math.max(1, Math.round(height * scale)),
  };
}

/** Base64-encode bytes in chunks so large images don't blow the arg limit. */
export function bytesToBase64(bytes: Uint8Array): string {
  const chunkSize = 8192;
  let binary = "";
  for (let i = 0; i < bytes.length; i += chunkSize) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunkSize));
  }
  return btoa(binary);
}

/**
 * Decode an uploaded file, downscale it to the upload cap, and re-encode
 * as PNG bytes. Browser-only (needs canvas); the pure sizing math above
 * is what the tests cover.
 */
export async function downscaleToPng(file: Blob, maxSide = MAX_UPLOAD_SIDE): Promise<Uint8Array> {
  const bitmap = await createImageBitmap(file);
  try {
    const { width, height } = fitWithin(bitmap.width, bitmap.height, maxSide);
    const canvas = document.createElement("canvas");
    canvas.width = width;
    canvas.height = height;
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("canvas 2d context unavailable");
    ctx.drawImage(bitmap, 0, 0, width, height);
    const blob = await new Promise<Blob>((resolve, reject) => {
      canvas.toBlob(
        (b) => (b ? resolve(b) : reject(new Error("PNG encoding failed"))),
        "image/png",
      );
    });
    return new Uint8Array(await blob.arrayBuffer());
  } finally {
    bitmap.close();
  }
}
