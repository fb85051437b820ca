import { ChatClient } from "./api.js";
import { ChatStore } from "./state.js";
import { mountChat } from "./ui.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");
mountChat(root, new ChatStore(new ChatClient()));
