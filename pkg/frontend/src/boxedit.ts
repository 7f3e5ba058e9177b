/** Rectangle editing geometry for region review.
 *
 * Pure functions over {x, y, w, h} boxes in image pixel coordinates. The UI
 * refuses to submit any edit for which validateBox reports problems; the
 * server re-validates, so this is a convenience gate, not the security one.
 */

export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
}

export type Handle = "move" | "nw" | "ne" | "sw" | "se";

/** Problems that make a box unusable inside a width x height image. */
export function validateBox(box: Box, width: number, height: number): string[] {
  const problems: string[] = [];
  const values = [box.x, box.y, box.w, box.h];
  if (values.some((v) => !Number.isFinite(v))) {
    return ["box coordinates must be finite numbers"];
  }
  if (box.w <= 0 || box.h <= 0) {
    problems.push(`box extent must be positive, got ${box.w}x${box.h}`);
  }
  if (box.x < 0 || box.y < 0) {
    problems.push(`box origin (${box.x}, ${box.y}) is outside the image`);
  }
  if (box.x + box.w > width) {
    problems.push(`box right edge ${box.x + box.w} exceeds image width ${width}`);
  }
  if (box.y + box.h > height) {
    problems.push(`box bottom edge ${box.y + box.h} exceeds image height ${height}`);
  }
  return problems;
}

export function boxInBounds(box: Box, width: number, height: number): boolean {
  return validateBox(box, width, height).length === 0;
}

/** Nearest in-bounds box: extent capped to the image, origin shifted inside. */
export function clampBox(box: Box, width: number, height: number): Box {
  const w = Math.min(Math.max(box.w, 1), width);
  const h = Math.min(Math.max(box.h, 1), height);
  const x = Math.min(Math.max(box.x, 0), width - w);
  const y = Math.min(Math.max(box.y, 0), height - h);
  return { x, y, w, h };
}

/** Applies a pointer drag to a handle and clamps the result to the image. */
export function dragBox(box: Box, handle: Handle, dx: number, dy: number,
                        width: number, height: number): Box {
  let { x, y, w, h } = box;
  switch (handle) {
    case "move":
      x += dx;
      y += dy;
      break;
    case "nw":
      x += dx; y += dy; w -= dx; h -= dy;
      break;
    case "ne":
      y += dy; w += dx; h -= dy;
      break;
    case "sw":
      x += dx; w -= dx; h += dy;
      break;
    case "se":
      w += dx; h += dy;
      break;
  }
  if (w < 1) { x = Math.min(x, box.x + box.w - 1); w = 1; }
  if (h < 1) { y = Math.min(y, box.y + box.h - 1); h = 1; }
  return clampBox({ x, y, w, h }, width, height);
}

export function boxFromPayload(payload: Record<string, unknown>): Box | null {
  const raw = payload.box;
  if (!Array.isArray(raw) || raw.length !== 4) return null;
  const [x, y, w, h] = raw.map(Number);
  if ([x, y, w, h].some((v) => !Number.isFinite(v))) return null;
  return { x: x!, y: y!, w: w!, h: h! };
}
