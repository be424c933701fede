/** Browser entry point: wires the session state machine to the page. */

import { StudyApi } from "./api.js";
import { keyToChoice } from "./keyboard.js";
import { PlayerPair } from "./player.js";
import { AnnotationSession, type SessionState } from "./session.js";

const ANNOTATOR_KEY = "annotator_id";

function annotatorId(): string {
  let id = localStorage.getItem(ANNOTATOR_KEY);
  if (!id) {
    id = crypto.randomUUID();
    localStorage.setItem(ANNOTATOR_KEY, id);
  }
  return id;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function start(): void {
  const params = new URLSearchParams(window.location.search);
  const studyId = params.get("study") ?? "";
  if (!studyId) {
    el("status").textContent = "Add ?study=<study_id> to the URL to begin.";
    return;
  }
  const api = new StudyApi(window.location.origin, studyId, annotatorId());
  const players = new PlayerPair(
    el<HTMLVideoElement>("video-left"),
    el<HTMLVideoElement>("video-right"),
  );
  const session = new AnnotationSession(api, { onChange: render });

  function render(state: SessionState): void {
    const status = el("status");
    const stage = el("stage");
    const doneScreen = el("done");
    const retryBanner = el("retry-banner");
    retryBanner.hidden = state.kind !== "retrying";
    stage.hidden = !(state.kind === "task" || state.kind === "submitting");
    doneScreen.hidden = state.kind !== "done";

    switch (state.kind) {
      case "loading":
        status.textContent = "Loading next comparison…";
        break;
      case "task": {
        status.textContent = "";
        el("question").textContent = state.task.question;
        el("prompt").textContent =
          state.task.axis === "prompt_following" ? `Prompt: ${state.task.prompt}` : "";
        players.load(
          api.mediaUrl(state.task.left_media),
          api.mediaUrl(state.task.right_media),
          () => {
            el("skip").hidden = false;
          },
        );
        el("skip").hidden = true;
        break;
      }
      case "submitting":
        status.textContent = "Recording your vote…";
        break;
      case "retrying":
        status.textContent = "";
        break;
      case "done":
        players.stop();
        el("done-count").textContent = String(state.votesCast);
        break;
      case "failed":
        status.textContent = `Something went wrong: ${state.message}`;
        break;
    }
  }

  document.addEventListener("keydown", (event) => {
    const choice = keyToChoice(event.key);
    if (choice) void session.choose(choice);
  });
  el("pick-left").addEventListener("click", () => void session.choose("left"));
  el("pick-right").addEventListener("click", () => void session.choose("right"));
  el("skip").addEventListener("click", () => void session.skipBrokenMedia());

  void session.start();
}

document.addEventListener("DOMContentLoaded", start);
