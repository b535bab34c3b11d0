import type { AnnotationBox } from "./api.js";

export interface OverlayRect {
  leftPct: number;
  topPct: number;
  widthPct: number;
  heightPct: number;
  label: string;
}

/**
 * Annotation boxes as percentage rectangles over the displayed image.
 * Returns [] until the image's natural size is known (jsdom and images that
 * have not loaded yet report 0x0).
 */
export function overlayRects(
  annotations: AnnotationBox[],
  naturalWidth: number,
  naturalHeight: number,
): OverlayRect[] {
  if (naturalWidth <= 0 || naturalHeight <= 0) return [];
  return annotations.map((a) => {
    const [x0, y0, x1, y1] = a.bbox;
    return {
      leftPct: (100 * x0) / naturalWidth,
      topPct: (100 * y0) / naturalHeight,
      widthPct: (100 * (x1 - x0)) / naturalWidth,
      heightPct: (100 * (y1 - y0)) / naturalHeight,
      label: a.class,
    };
  });
}

export function renderOverlay(
  container: HTMLElement,
  rects: OverlayRect[],
  visible: boolean,
): void {
  container.innerHTML = "";
  if (!visible) return;
  for (const rect of rects) {
    const box = container.ownerDocument.createElement("div");
    box.className = "annotation-box";
    box.style.left = `${rect.leftPct}%`;
    box.style.top = `${rect.topPct}%`;
    box.style.width = `${rect.widthPct}%`;
    box.style.height = `${rect.heightPct}%`;
    box.title = rect.label;
    container.appendChild(box);
  }
}
