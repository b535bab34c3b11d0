import type { Verdict } from "./api.js";

/** K = keep, H = hallucination, U = unrealistic; anything else is ignored. */
export function verdictForKey(key: string): Verdict | null {
  switch (key.toLowerCase()) {
    case "k":
      return "kept";
    case "h":
      return "rejected_hallucination";
    case "u":
      return "rejected_unrealistic";
    default:
      return null;
  }
}

/** True when the event targets a form control and must not trigger a verdict. */
export function isTypingTarget(target: EventTarget | null): boolean {
  const tagName = (target as { tagName?: unknown } | null)?.tagName;
  if (typeof tagName !== "string") return false;
  const tag = tagName.toLowerCase();
  return tag === "input" || tag === "select" || tag === "textarea";
}
