import { ApiClient } from "./api.js";
import { ReviewApp } from "./app.js";

const root = document.getElementById("app");
if (root) {
  const app = new ReviewApp(root, new ApiClient(""), { pollMs: 3000 });
  void app.start();
}
