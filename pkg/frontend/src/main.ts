import { Api } from "./api.js";
import { mountExplorerUi } from "./ui.js";

const root = document.querySelector<HTMLDivElement>("#app");
if (!root) throw new Error("missing #app container");
mountExplorerUi(root, new Api());
