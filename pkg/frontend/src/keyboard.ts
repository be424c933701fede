/** Keyboard voting: left/right arrows pick the corresponding side. */

import type { Choice } from "./types.js";

export function keyToChoice(key: string): Choice | null {
  if (key === "ArrowLeft") return "left";
  if (key === "ArrowRight") return "right";
  return null;
}
