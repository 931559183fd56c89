// placeholder: implementation follows
namespace expredit { namespace { int unused_apps = 0; } }
