/** Browser entry point. The session id lives in the URL hash (#s=<id>) so a
 * reload rebuilds the full view from GET /sessions/{id}/events alone. */

import { ApiClient } from "./api.js";
import { App } from "./app.js";

function sessionFromHash(hash: string): string | null {
  const match = /#s=([A-Za-z0-9_-]+)/.exec(hash);
  return match?.[1] ?? null;
}

export function boot(doc: Document): App {
  const mount = doc.getElementById("mount");
  if (!mount) throw new Error("missing #mount element");
  const app = new App({ doc, mount, api: new ApiClient("") });
  const original = app.attach.bind(app);
  app.attach = async (sessionId: string) => {
    doc.defaultView?.history.replaceState(null, "", `#s=${sessionId}`);
    await original(sessionId);
  };
  void app.init(sessionFromHash(doc.defaultView?.location.hash ?? ""));
  return app;
}

if (typeof document !== "undefined" && document.getElementById("mount")) {
  boot(document);
}
